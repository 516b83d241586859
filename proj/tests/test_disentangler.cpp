#include "oracles.hpp"

#include "ssd/disentangler.hpp"
#include "ssd/evaluator.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>

using namespace ssd;
using oracle::random_matrix;

namespace {

/// Correlated standard normal pairs (rho) in two 1-D columns.
PairBatch gaussian_pairs(int n, double rho, Rng& rng) {
    PairBatch p{Matrix(n, 1), Matrix(n, 1)};
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        p.a(i, 0) = x;
        p.b(i, 0) = rho * x + std::sqrt(1.0 - rho * rho) * rng.normal();
    }
    return p;
}

CriticSet make_critics(int a_dim, int b_dim, int w_dim, int hidden, std::uint64_t seed) {
    Rng rng(seed);
    CriticSet c;
    c.e = MiCritic("e", a_dim, b_dim, hidden, rng);
    c.z = MiCritic("z", w_dim, a_dim, hidden, rng);
    c.v = MiCritic("v", w_dim, b_dim, hidden, rng);
    return c;
}

/// Bound of the e-critic on a large fresh sample with a shuffled marginal.
double held_out_estimate(const MiCritic& critic, const PairBatch& joint, std::uint64_t seed) {
    return mi_lower_bound(critic, joint, shuffle_marginals(joint, seed)).value;
}

}  // namespace

TEST_CASE("reconstruction shares the decoder across positions", "[disentangler]") {
    Rng rng(1);
    Decoder d("dec", 6, 5, 4, rng);
    Matrix z = random_matrix(3, 3, rng), v = random_matrix(3, 3, rng);
    z.row(2) = z.row(0);
    v.row(2) = v.row(0);
    const Matrix r = reconstruct(z, v, d);
    CHECK(r.row(2) == r.row(0));
    CHECK(r.cols() == 4);
}

TEST_CASE("zero latents with zero biases reconstruct to zero", "[disentangler]") {
    Rng rng(2);
    Decoder d("dec", 4, 5, 3, rng);
    CHECK(reconstruct(Matrix::Zero(2, 2), Matrix::Zero(2, 2), d).isZero());
}

TEST_CASE("reconstruction matches a two-layer transcription", "[disentangler]") {
    Rng rng(3);
    Decoder d("dec", 6, 5, 4, rng);
    d.hidden.bias.value = random_matrix(1, 5, rng);
    d.output.bias.value = random_matrix(1, 4, rng);
    const Matrix z = random_matrix(3, 3, rng), v = random_matrix(3, 3, rng);
    for (int i = 0; i < 3; ++i) {
        RowVector x(6);
        x << z.row(i), v.row(i);
        RowVector h(5);
        for (int j = 0; j < 5; ++j) {
            double s = d.hidden.bias.value(0, j);
            for (int k = 0; k < 6; ++k) s += x(k) * d.hidden.weight.value(k, j);
            h(j) = std::tanh(s);
        }
        for (int j = 0; j < 4; ++j) {
            double s = d.output.bias.value(0, j);
            for (int k = 0; k < 5; ++k) s += h(k) * d.output.weight.value(k, j);
            CHECK(std::abs(reconstruct(z, v, d)(i, j) - s) < 1e-14);
        }
    }
}

TEST_CASE("reconstruction loss closed forms", "[disentangler]") {
    Rng rng(4);
    const Matrix x = random_matrix(4, 3, rng);
    const std::vector<bool> all(4, true);
    CHECK(reconstruction_loss(x, x, all) == 0.0);
    CHECK(reconstruction_loss(x.array() + 0.3, x, all) == Catch::Approx(0.09).margin(1e-15));

    Matrix a(2, 3), b(2, 3);
    a << 1, 2, 3, 0, 0, 0;
    b << 1, 0, 0, 1, 1, -1;
    // rows: (0 + 4 + 9)/3 and (1 + 1 + 1)/3, averaged
    CHECK(reconstruction_loss(a, b, {true, true}) == Catch::Approx((13.0 / 3.0 + 1.0) / 2.0));
    CHECK(reconstruction_loss(a, b, {false, true}) == Catch::Approx(1.0));
}

TEST_CASE("domain prediction pools with max", "[disentangler]") {
    Rng rng(5);
    DomainPredictor p("dom", 3, rng);
    p.layer.bias.value = random_matrix(1, 2, rng);
    const Matrix z1 = random_matrix(1, 3, rng);
    const RowVector direct = ad::softmax_rows(p.layer.apply(z1)).row(0);
    CHECK((predict_domain(z1, {true}, p) - direct).cwiseAbs().maxCoeff() < 1e-15);

    const Matrix z = random_matrix(3, 3, rng);
    Matrix twice(6, 3);
    twice << z, z;
    CHECK((predict_domain(z, std::vector<bool>(3, true), p) - predict_domain(twice, std::vector<bool>(6, true), p))
              .cwiseAbs()
              .maxCoeff() == 0.0);

    p.layer.weight.value.setZero();
    p.layer.bias.value.setZero();
    const RowVector half = predict_domain(z, std::vector<bool>(3, true), p);
    CHECK(half(0) == 0.5);
    CHECK(half(1) == 0.5);
}

TEST_CASE("domain loss closed forms", "[disentangler]") {
    Matrix p(1, 2);
    p << 1.0, 0.0;
    CHECK(domain_loss(p, {0}) < 1e-12);
    p << 0.5, 0.5;
    CHECK(domain_loss(p, {1}) == Catch::Approx(std::log(2.0)));
    p << 0.9, 0.1;
    CHECK(domain_loss(p, {1}) == Catch::Approx(-std::log(0.1)));
}

TEST_CASE("marginal shuffling", "[disentangler]") {
    CHECK(shuffle_marginals(2, 123) == IntVector{1, 0});
    CHECK(shuffle_marginals(7, 5) == shuffle_marginals(7, 5));
    int fixed = 0;
    for (std::uint64_t s = 0; s < 5000; ++s) {
        const IntVector p = shuffle_marginals(5, s);
        for (int i = 0; i < 5; ++i) fixed += p[static_cast<std::size_t>(i)] == i ? 1 : 0;
    }
    // a uniform permutation would give about 5000 fixed points here
    CHECK(fixed <= 2);
    CHECK_THROWS_AS(shuffle_marginals(1, 0), std::invalid_argument);
}

TEST_CASE("constant critic gives a zero bound", "[disentangler]") {
    Rng rng(6);
    for (double c : {-3.0, 0.0, 0.7, 25.0}) {
        const PairBatch j{random_matrix(9, 2, rng), random_matrix(9, 3, rng)};
        const auto critic = [c](const Matrix& a, const Matrix&) { return Matrix::Constant(a.rows(), 1, c); };
        CHECK(std::abs(mi_lower_bound(critic, j, shuffle_marginals(j, 1)).value) <= 1e-12);
    }
}

TEST_CASE("bound with joint equal to marginal is non-positive", "[disentangler]") {
    Rng rng(7);
    MiCritic critic("c", 2, 2, 8, rng);
    for (int trial = 0; trial < 20; ++trial) {
        const PairBatch j{random_matrix(16, 2, rng), random_matrix(16, 2, rng)};
        CHECK(mi_lower_bound(critic, j, j).value <= 1e-15);
    }
}

TEST_CASE("dv_bound gradient matches finite differences", "[disentangler]") {
    Rng rng(8);
    ad::Parameter tj("tj", random_matrix(6, 1, rng)), tm("tm", random_matrix(6, 1, rng));
    CHECK(oracle::gradient_check({&tj, &tm}, [&](ad::Tape& t) { return dv_bound(t.param(tj), t.param(tm)); }) < 1e-7);
}

TEST_CASE("critic converges on correlated Gaussians", "[disentangler]") {
    const double rho = 0.5;
    const double analytic = -0.5 * std::log(1.0 - rho * rho);
    Rng data(9);
    CriticSet critics = make_critics(1, 1, 1, 32, 10);
    Adam adam({0.005, 0.9, 0.999, 1e-8, 0.0});
    train_critics(
        critics,
        [&] {
            const PairBatch p = gaussian_pairs(512, rho, data);
            return LatentSamples{p.a, p.b, p.a};
        },
        3000, adam, 11);
    const double est = held_out_estimate(critics.e, gaussian_pairs(50000, rho, data), 12);
    CHECK(std::abs(est - analytic) < 0.03);
}

TEST_CASE("train_critics validates the step count", "[disentangler]") {
    CriticSet critics = make_critics(1, 1, 1, 4, 1);
    Adam adam;
    CHECK_THROWS_AS(train_critics(critics, [] { return LatentSamples{}; }, 0, adam, 1), std::invalid_argument);
}

TEST_CASE("critic stays near zero on independent streams", "[disentangler]") {
    Rng data(13);
    CriticSet critics = make_critics(2, 2, 2, 16, 14);
    Adam adam({0.005, 0.9, 0.999, 1e-8, 0.0});
    train_critics(
        critics, [&] { return LatentSamples{random_matrix(256, 2, data), random_matrix(256, 2, data), random_matrix(256, 2, data)}; },
        600, adam, 15);
    const PairBatch fresh{random_matrix(20000, 2, data), random_matrix(20000, 2, data)};
    CHECK(held_out_estimate(critics.e, fresh, 16) <= 0.05);
}

TEST_CASE("critic estimate grows with training on identical discrete streams", "[disentangler]") {
    const auto discrete = [](Rng& rng) {
        Matrix x(128, 1);
        for (int i = 0; i < 128; ++i) x(i, 0) = static_cast<double>(rng.below(4));
        return x;
    };
    double short_total = 0.0, long_total = 0.0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        for (int steps : {20, 300}) {
            Rng data(100 + seed);
            CriticSet critics = make_critics(1, 1, 1, 16, 200 + seed);
            Adam adam({0.005, 0.9, 0.999, 1e-8, 0.0});
            train_critics(
                critics,
                [&] {
                    const Matrix x = discrete(data);
                    return LatentSamples{x, x, x};
                },
                steps, adam, seed);
            Matrix x(4000, 1);
            for (int i = 0; i < 4000; ++i) x(i, 0) = static_cast<double>(data.below(4));
            const double est = held_out_estimate(critics.e, {x, x}, 7);
            (steps == 20 ? short_total : long_total) += est;
        }
    }
    CHECK(long_total > short_total);
    // log 4 is the ceiling for four equiprobable values
    CHECK(long_total / 4.0 < std::log(4.0) + 0.05);
}

TEST_CASE("regularizer with constant critics is zero and pure", "[disentangler]") {
    Rng rng(17);
    CriticSet critics = make_critics(3, 3, 4, 8, 18);
    const Matrix z = random_matrix(10, 3, rng), v = random_matrix(10, 3, rng), w = random_matrix(10, 4, rng);
    {
        ad::Tape t;
        const auto a = encoder_mi_regularizer(t, critics, t.constant(z), t.constant(v), t.constant(w), 5);
        ad::Tape u;
        const auto b = encoder_mi_regularizer(u, critics, u.constant(z), u.constant(v), u.constant(w), 5);
        CHECK(a.value.scalar() == b.value.scalar());
        CHECK(a.value.scalar() == Catch::Approx(a.mi_zv - a.mi_wz - a.mi_wv).margin(1e-14));
    }
    for (MiCritic* c : {&critics.e, &critics.z, &critics.v}) c->output.weight.value.setZero();
    ad::Tape t;
    const auto r = encoder_mi_regularizer(t, critics, t.constant(z), t.constant(v), t.constant(w), 5);
    CHECK(std::abs(r.value.scalar()) <= 1e-12);
}

TEST_CASE("regularizer gradients reach the latents but not the critics", "[disentangler]") {
    Rng rng(19);
    CriticSet critics = make_critics(2, 2, 2, 6, 20);
    ad::Parameter z("z", random_matrix(8, 2, rng)), v("v", random_matrix(8, 2, rng)), w("w", random_matrix(8, 2, rng));
    const double err = oracle::gradient_check({&z, &v, &w}, [&](ad::Tape& t) {
        return encoder_mi_regularizer(t, critics, t.param(z), t.param(v), t.param(w), 3).value;
    });
    CHECK(err < 1e-6);
    for (auto* p : critics.parameters()) CHECK(p->grad.isZero());
}

TEST_CASE("regularizer falls on a two-signal toy while both signals stay decodable", "[disentangler]") {
    // x = [s1, s2, noise]; z and v read x through their own maps
    Rng data(21);
    const auto sample = [&](int n, IntVector* s1, IntVector* s2) {
        Matrix x(n, 4);
        for (int i = 0; i < n; ++i) {
            const int a = static_cast<int>(data.below(2)), b = static_cast<int>(data.below(2));
            if (s1) s1->push_back(a);
            if (s2) s2->push_back(b);
            x(i, 0) = 2.0 * a - 1.0 + 0.1 * data.normal();
            x(i, 1) = 2.0 * b - 1.0 + 0.1 * data.normal();
            x(i, 2) = data.normal();
            x(i, 3) = data.normal();
        }
        return x;
    };
    Rng init(22);
    Matrix wz0 = 0.3 * random_matrix(4, 3, init), wv0 = 0.3 * random_matrix(4, 3, init);
    // both maps start mixing the two signals
    wz0.row(0).array() += 1.0;
    wz0.row(1).array() += 0.5;
    wv0.row(0).array() += 0.5;
    wv0.row(1).array() += 1.0;
    ad::Parameter wz("wz", wz0), wv("wv", wv0);
    CriticSet critics = make_critics(3, 3, 4, 16, 23);
    Adam critic_adam({0.005, 0.9, 0.999, 1e-8, 0.0});
    Adam encoder_adam({0.01, 0.9, 0.999, 1e-8, 0.0});

    const auto latents = [&](const Matrix& x) {
        return LatentSamples{(x * wz.value).array().tanh().matrix(), (x * wv.value).array().tanh().matrix(), x};
    };
    const auto evaluate = [&] {
        Rng eval(99);
        double total = 0.0;
        for (int r = 0; r < 4; ++r) {
            Matrix x(256, 4);
            for (int i = 0; i < 256; ++i) {
                const int a = static_cast<int>(eval.below(2)), b = static_cast<int>(eval.below(2));
                x.row(i) << 2.0 * a - 1.0, 2.0 * b - 1.0, eval.normal(), eval.normal();
            }
            ad::Tape t;
            ad::Var xv = t.constant(x);
            auto z = ad::tanh(ad::matmul(xv, t.frozen(wz)));
            auto v = ad::tanh(ad::matmul(xv, t.frozen(wv)));
            total += encoder_mi_regularizer(t, critics, z, v, xv, 1000 + static_cast<std::uint64_t>(r)).value.scalar();
        }
        return total / 4.0;
    };

    train_critics(critics, [&] { return latents(sample(256, nullptr, nullptr)); }, 200, critic_adam, 1);
    const double before = evaluate();
    for (int round = 0; round < 15; ++round) {
        for (int s = 0; s < 20; ++s) {
            ad::Tape t;
            ad::Var xv = t.constant(sample(256, nullptr, nullptr));
            auto z = ad::tanh(ad::matmul(xv, t.param(wz)));
            auto v = ad::tanh(ad::matmul(xv, t.param(wv)));
            t.backward(encoder_mi_regularizer(t, critics, z, v, xv, static_cast<std::uint64_t>(round * 100 + s)).value);
            encoder_adam.step({&wz, &wv});
        }
        train_critics(critics, [&] { return latents(sample(256, nullptr, nullptr)); }, 50, critic_adam,
                      static_cast<std::uint64_t>(round + 10));
    }
    const double after = evaluate();
    CHECK(after < before);

    IntVector s1, s2;
    const LatentSamples fin = latents(sample(400, &s1, &s2));
    Matrix both(400, 6);
    both << fin.z, fin.v;
    CHECK(domain_probe(both, s1, 1) >= 0.9);
    CHECK(domain_probe(both, s2, 1) >= 0.9);
}
