"""Held-out IWAE NLL of FAE(F=20), VAE and FAE(F=0) trained with identical seeds."""

from _common import emit, parser

from fisher_plane.experiments import load_binarized_mnist, table1_direction

if __name__ == "__main__":
    p = parser(__doc__)
    p.add_argument("--data", default=None, help="MNIST IDX directory (default: $FISHER_PLANE_DATA_DIR)")
    p.add_argument("--n-train", type=int, default=10_000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--lambda-z", type=float, default=1.0)
    p.add_argument("--allow-fewer", action="store_true")
    a = p.parse_args()
    splits = load_binarized_mnist(a.data, need_train=0 if a.allow_fewer else a.n_train)
    res = table1_direction(splits["train"].head(a.n_train), splits["test"].images[:a.n_test],
                           epochs=a.epochs or 30, k=a.k, lambda_z=a.lambda_z, seed=a.seed)
    for r in res.rows.values():
        print(f"{r.name:<8} nll={r.nll:.3f} +- {r.std_err:.3f} clips={r.clip_count}")
    print(f"paired gap FAE(F=0) - FAE(F=20) = {res.gap_f0_minus_f20:.3f} +- {res.gap_std_err:.3f}")
    emit(res, a.out)
