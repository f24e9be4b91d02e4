#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace daobs {

struct AdamOptions {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    friend bool operator==(const AdamOptions&, const AdamOptions&) = default;
};

/// Adam over a flat parameter vector. Moments are kept in double.
class Adam {
public:
    Adam(std::size_t size, AdamOptions options);

    /// params -= lr * m_hat / (sqrt(v_hat) + eps). Throws TrainingError on non-finite gradients.
    void step(std::span<float> params, std::span<const float> grad);

    [[nodiscard]] std::int64_t steps() const { return t_; }
    [[nodiscard]] const AdamOptions& options() const { return options_; }

private:
    AdamOptions options_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::int64_t t_ = 0;
};

}  // namespace daobs
