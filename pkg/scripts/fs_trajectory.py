"""FS-plane trajectory of FAE(F_z = 20) over training on binarized MNIST digits."""

from _common import emit, parser

from fisher_plane.experiments import fs_trajectory, load_binarized_mnist

if __name__ == "__main__":
    p = parser(__doc__)
    p.add_argument("--data", default=None, help="MNIST IDX directory (default: $FISHER_PLANE_DATA_DIR)")
    p.add_argument("--n-train", type=int, default=10_000)
    p.add_argument("--allow-fewer", action="store_true", help="run on whatever is available (proxy runs)")
    a = p.parse_args()
    splits = load_binarized_mnist(a.data, need_train=0 if a.allow_fewer else a.n_train)
    train = splits["train"].head(a.n_train)
    res = fs_trajectory(train, epochs=a.epochs or 30, seed=a.seed)
    for e, n, j, pr in zip(res.epochs, res.entropy_power, res.fisher_trace, res.product):
        print(f"epoch {e:3d}  N={n:.5f}  trJ={j:10.3f}  N*trJ/d={pr:.6f}")
    print(f"n_train={len(train)} spearman(epoch, trJ)={res.rho_fisher:.3f} min product={res.min_product:.6f}")
    emit(res, a.out)
