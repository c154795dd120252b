"""Train FAE with lambda_z = 10 for several F_z targets on a synthetic Gaussian set."""

from _common import emit, parser

from fisher_plane.experiments import constraint_satisfaction

if __name__ == "__main__":
    p = parser(__doc__)
    p.add_argument("--latent-dim", type=int, default=1)
    p.add_argument("--f", type=float, nargs="+", default=[0.25, 1.0, 4.0])
    a = p.parse_args()
    res = constraint_satisfaction(a.f, epochs=a.epochs or 20, latent_dim=a.latent_dim, seed=a.seed)
    for r in res:
        print(f"F_z={r.f_z:<5g} mean 1/sigma^2={r.mean_inv_var:.4f} ratio={r.ratio:.3f} "
              f"mean sigma^2={r.mean_var:.4f} clips={r.clip_count}")
    emit(res, a.out)
