"""Compare the discrete inf-sup constant of the P2/P1 and P1/P1 pairs.

The quadratic-velocity pair stays bounded away from zero under refinement;
the equal-order pair collapses, which is why pressure recovery refuses it.  The coarsest mesh (n = 1) has no
free interior fluid vertex, so both pairs give zero there and it is skipped.

Run with ``python demos/infsup_pairs.py``.
"""

from fsi.assembly import discretize
from fsi.mesh import two_cube_mesh
from fsi.pressure import measure_infsup


def main():
    for n in (2, 3):
        mesh = two_cube_mesh(n)
        row = []
        for degree in (2, 1):
            rep = measure_infsup(discretize(mesh, degree=degree))
            row.append(f"P{degree}/P1 beta_h = {rep.beta_h:.4f}")
        print(f"n = {n}: " + ", ".join(row))


if __name__ == "__main__":
    main()
