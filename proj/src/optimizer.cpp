#include "daobs/optimizer.hpp"

#include <cmath>

#include "daobs/errors.hpp"

namespace daobs {

Adam::Adam(std::size_t size, AdamOptions options) : options_(options), m_(size, 0.0), v_(size, 0.0) {
    if (!(options.learning_rate >= 0.0)) throw ConfigError("learning rate must be nonnegative");
}

void Adam::step(std::span<float> params, std::span<const float> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) throw InputError("optimizer size mismatch");
    for (float g : grad)
        if (!std::isfinite(g)) throw TrainingError("non-finite gradient");
    ++t_;
    const double b1 = options_.beta1;
    const double b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const double lr = options_.learning_rate;
    if (lr == 0.0) return;
    for (std::size_t i = 0; i < m_.size(); ++i) {
        const double g = grad[i];
        m_[i] = b1 * m_[i] + (1.0 - b1) * g;
        v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
        const double update = lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + options_.epsilon);
        params[i] = static_cast<float>(params[i] - update);
    }
}

}  // namespace daobs
