#pragma once

#include "ssd/autodiff.hpp"

#include <string>
#include <vector>

namespace ssd {

/// Uniform in +-sqrt(6 / (rows + cols)).
Matrix glorot_uniform(int rows, int cols, Rng& rng);

/// Square matrix with orthonormal columns (QR of a Gaussian draw, signs fixed).
Matrix orthogonal(int n, Rng& rng);

inline ad::Var use(ad::Tape& tape, ad::Parameter& p, bool trainable) {
    return trainable ? tape.param(p) : tape.frozen(p);
}

/// x W + b applied row-wise.
struct Affine {
    ad::Parameter weight;
    ad::Parameter bias;

    Affine() = default;
    Affine(const std::string& name, int in, int out, Rng& rng)
        : weight(name + ".weight", glorot_uniform(in, out, rng)), bias(name + ".bias", Matrix::Zero(1, out)) {}

    int in_dim() const { return static_cast<int>(weight.value.rows()); }
    int out_dim() const { return static_cast<int>(weight.value.cols()); }

    ad::Var apply(ad::Tape& tape, const ad::Var& x, bool trainable) {
        return ad::affine(x, use(tape, weight, trainable), use(tape, bias, trainable));
    }
    Matrix apply(const Matrix& x) const {
        Matrix y = x * weight.value;
        y.rowwise() += bias.value.row(0);
        return y;
    }
    std::vector<ad::Parameter*> parameters() { return {&weight, &bias}; }
};

}  // namespace ssd
