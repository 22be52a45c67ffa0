"""A tour of the 33-character multi-level geocode.

Run:  python3 demos/codec_tour.py
"""

from geolang import dgg
from geolang.dgg import LatLng

# a point in Suzhou; level 22 is roughly a 2 m cell
here = LatLng(31.3210, 120.7155)
leaf = dgg.latlng_to_cell(here, 22)
print("leaf token:", leaf.token(), "level", leaf.level())

code = dgg.encode_2lt3c(leaf)
print("code:", dgg.format_code(code))  # 11 groups of 3, two levels per group

# every group decodes back to the token of two consecutive ancestors
ladder = dgg.decode_2lt3c(code)
for level in (1, 2, 9, 10, 21, 22):
    print(f"  level {level:2d}: {ladder[level - 1]}")
assert ladder[-1] == leaf.token()

# a truncated code still yields the coarse ancestors
print("first 5 groups:", dgg.decode_2lt3c(code[:15], allow_partial=True))

# damage one character and recover the deepest level that still checks out
damaged = code[:20] + "0" + code[21:]
cell, complete = dgg.deepest_consistent(damaged)
print("after damage: level", cell.level(), "complete" if complete else "partial")

centre = dgg.cell_center(cell)
print(f"fallback centre {centre.lat:.5f}, {centre.lng:.5f}")

# each level halves the cell edge; watch the centre close in on the point
for level in (10, 14, 18, 22):
    c = dgg.cell_center(leaf.parent(level))
    print(f"  level {level}: centre off by {abs(c.lat - here.lat) + abs(c.lng - here.lng):.6f} deg")
