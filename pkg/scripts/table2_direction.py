"""Train/test NLL of FAE across F on the skewed (mostly zeros) training split."""

from _common import emit, parser

from fisher_plane.data import binarize, build_skewed_split
from fisher_plane.experiments import load_binarized_mnist, load_raw_train, table2_direction

if __name__ == "__main__":
    p = parser(__doc__)
    p.add_argument("--data", default=None, help="MNIST IDX directory (default: $FISHER_PLANE_DATA_DIR)")
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--major", type=int, default=5800, help="zeros in the skewed split (proxy runs use fewer)")
    p.add_argument("--minor", type=int, default=100)
    a = p.parse_args()
    skewed = binarize(build_skewed_split(load_raw_train(a.data), a.seed, major_count=a.major,
                                         minor_count=a.minor))
    test = load_binarized_mnist(a.data)["test"].images[:a.n_test]
    res = table2_direction(skewed, test, epochs=a.epochs or 30, k=a.k, seed=a.seed)
    for r in res.rows:
        print(f"{r.name:<10} train nll={r.train_nll:.3f}  test nll={r.nll:.3f}")
    print(f"spearman(F, train)={res.rho_train:.3f}  spearman(F, test)={res.rho_test:.3f}")
    emit(res, a.out)
