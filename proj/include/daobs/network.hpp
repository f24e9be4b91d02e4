#pragma once

// Minimal feed-forward network engine: convolution, leaky rectifier, max-pool,
// fully-connected and sigmoid layers over a flat parameter store, with
// per-sample forward/backward passes.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace daobs {

enum class LayerKind { Conv, LeakyRelu, MaxPool, Dense, Sigmoid };

enum class Role { ENN, ONN, DAM, DCM };

std::string to_string(LayerKind kind);
std::string to_string(Role role);
LayerKind layer_kind_from_string(const std::string& name);
Role role_from_string(const std::string& name);

struct Shape {
    int channels = 1;
    int height = 1;
    int width = 1;

    [[nodiscard]] std::size_t size() const {
        return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
               static_cast<std::size_t>(width);
    }
    friend bool operator==(const Shape&, const Shape&) = default;
};

/// One layer. Only the fields relevant to `kind` are meaningful.
struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    int in_channels = 0;   // Conv
    int out_channels = 0;  // Conv
    int kernel = 0;        // Conv, odd; zero "same" padding
    int stride = 1;        // Conv
    int window = 0;        // MaxPool, window == stride
    int in_features = 0;   // Dense
    int out_features = 0;  // Dense
    double slope = 0.2;    // LeakyRelu

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ArchitectureSpec {
    Role role = Role::ENN;
    Shape input;
    std::vector<LayerSpec> layers;

    /// Throws ConfigError if the layer chain is not shape-consistent.
    void validate() const;
    [[nodiscard]] Shape output_shape() const;
    [[nodiscard]] std::size_t param_count() const;
    /// Offset of each layer's parameters (weights then bias) in the flat store; size layers+1.
    [[nodiscard]] std::vector<std::size_t> param_offsets() const;
    /// Number of leading layers that produce the pre-sigmoid output.
    [[nodiscard]] std::size_t logit_depth() const;

    friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

/// Shape after `layer` is applied to `in`.
Shape layer_output_shape(const LayerSpec& layer, const Shape& in);
std::size_t layer_param_count(const LayerSpec& layer);

/// Activations cached by a forward pass for the matching backward pass.
template <typename T>
struct BasicTape {
    std::vector<std::vector<T>> inputs;              // input of each executed layer
    std::vector<std::vector<std::int32_t>> argmax;   // MaxPool winners per layer (empty otherwise)
    std::size_t depth = 0;
};
using Tape = BasicTape<float>;

// The engine is instantiated for float (training, inference) and double
// (finite-difference gradient checks).

/// Runs the first `depth` layers (all layers when depth exceeds the layer count).
/// `tape` may be null for inference.
template <typename T>
std::vector<T> forward(const ArchitectureSpec& arch, std::span<const T> params, std::span<const T> input,
                       BasicTape<T>* tape = nullptr, std::size_t depth = static_cast<std::size_t>(-1));

/// Backpropagates `grad_output` through the layers recorded in `tape`. Parameter
/// gradients are added into `grad_params`; the input gradient is written to
/// `grad_input` when it is non-null.
template <typename T>
void backward(const ArchitectureSpec& arch, std::span<const T> params, const BasicTape<T>& tape,
              std::span<const T> grad_output, std::span<T> grad_params, std::vector<T>* grad_input = nullptr);

/// Scalar-output MLP (Dense / LeakyRelu layers only): value and input gradient.
template <typename T>
struct InputGradient {
    T value{};
    std::vector<T> gradient;
};

template <typename T>
InputGradient<T> mlp_input_gradient(const ArchitectureSpec& arch, std::span<const T> params, std::span<const T> x);

/// Adds d/dparams of coeff * (||grad_x f(x)|| - 1)^2 into `grad_params` and returns
/// the penalty value. Valid for scalar-output MLPs with piecewise-linear activations,
/// whose input gradient is multilinear in the weights between activation kinks.
template <typename T>
T gradient_penalty_accumulate(const ArchitectureSpec& arch, std::span<const T> params, std::span<const T> x,
                              T coeff, std::span<T> grad_params);

/// Throws ConfigError unless `arch` is a scalar-output chain of Dense and LeakyRelu layers.
void require_scalar_mlp(const ArchitectureSpec& arch);

}  // namespace daobs
