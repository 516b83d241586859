#include "ssd/optimizer.hpp"

namespace ssd {

void zero_grads(const std::vector<ad::Parameter*>& params) {
    for (auto* p : params) p->zero_grad();
}

double Adam::step(const std::vector<ad::Parameter*>& params) {
    double sq = 0.0;
    for (const auto* p : params) sq += p->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    const double scale = (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;

    for (auto* p : params) {
        Slot& s = slots_[p->name];
        if (s.m.size() == 0) {
            s.m = Matrix::Zero(p->value.rows(), p->value.cols());
            s.v = Matrix::Zero(p->value.rows(), p->value.cols());
        }
        ++s.t;
        const Matrix g = p->grad * scale;
        s.m = config_.beta1 * s.m + (1.0 - config_.beta1) * g;
        s.v = config_.beta2 * s.v + (1.0 - config_.beta2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(s.t));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(s.t));
        const auto m_hat = s.m.array() / c1;
        const auto v_hat = s.v.array() / c2;
        p->value.array() -= config_.learning_rate * m_hat / (v_hat.sqrt() + config_.epsilon);
        p->zero_grad();
    }
    return norm;
}

}  // namespace ssd
