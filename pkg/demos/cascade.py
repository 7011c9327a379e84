"""Cascadic run: refine every 15 iterations and watch max |D Phi_k| level out."""

from lipshape import holdall_square_domain, run, tracking_instance

st = run(
    holdall_square_domain(1.0, 4),
    tracking_instance(),
    gamma=0.5,
    refine_every=15,
    refine_levels=4,
    hausdorff_h=0,
)
print(f"{st.status} after {st.k} iterations")
print(f"{'k':>4} {'triangles':>10} {'dPhi_inf':>9}  ")
for row in st.rows[::5]:
    bar = "#" * int(round(20 * (row["dPhi_inf"] - 1)))
    print(f"{row['k']:4d} {row['n_triangles']:10d} {row['dPhi_inf']:9.4f}  {bar}")
