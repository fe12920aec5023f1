"""Early-stopped kernel GD against the interpolant on one noisy sphere data set."""

import argparse

from ntk_lab.data import l2_error, make_dataset, sample_sphere
from ntk_lab.earlystop import run_early_stopped_kernel_gd
from ntk_lab.ntk import fit_krr, gram_matrix


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--n", type=int, default=100)
    parser.add_argument("--sigma", type=float, default=0.3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    train_set = make_dataset(sample_sphere(args.n, 2, args.seed), "quadratic_norm", args.sigma, args.seed)
    test_pts = sample_sphere(1000, 2, args.seed + 1)
    gram = gram_matrix(train_set.inputs)
    model, diag = run_early_stopped_kernel_gd(train_set.inputs, train_set.noisy_labels, args.sigma, eta=0.01, gram=gram)
    interp = fit_krr(train_set.inputs, train_set.noisy_labels, 0.0, gram=gram)
    print(f"step size {diag.step_size:.4g}, k* = {diag.k_star}")
    print(f"early stopped L2 error {l2_error(model.predict_many, 'quadratic_norm', test_pts):.4f}")
    print(f"interpolant   L2 error {l2_error(interp.predict_many, 'quadratic_norm', test_pts):.4f}")


if __name__ == "__main__":
    main()
