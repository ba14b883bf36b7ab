#pragma once

// Recurrent Q-network: dense(ReLU) -> stacked LSTM -> dense(ReLU) -> linear.
// Sequences are column-major: an input batch is an (obs_dim x T) matrix and
// Q-values come back as (actions x T).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "tpb/rng.hpp"

namespace tpb::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct NetworkShape {
    std::size_t obs_dim = 0;
    std::size_t hidden = 64;
    std::size_t lstm_layers = 2;
    std::size_t actions = 0;

    bool operator==(const NetworkShape&) const = default;
};

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;
};

/// Gate rows are stacked as [input; forget; candidate; output], each `hidden` tall.
struct LstmLayer {
    Matrix w_input;      // 4H x in
    Matrix w_recurrent;  // 4H x H
    Vector bias;         // 4H
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class StaleCache : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class NonFiniteGradient : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct NetworkParams {
    NetworkShape shape;
    DenseLayer input;
    std::vector<LstmLayer> lstm;
    DenseLayer hidden;
    DenseLayer output;
    // Bumped on every in-place update; forward caches remember it so that a
    // backward pass against modified weights is rejected. Copies share it.
    std::uint64_t revision = 0;

    /// All arrays sized for `shape` and filled with zeros.
    static NetworkParams zeros(const NetworkShape& shape);
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, forget-gate bias 1,
    /// other biases 0.
    static NetworkParams initialize(const NetworkShape& shape, Rng& rng);

    std::size_t parameter_count() const;
    void touch();

    /// Visits every parameter array as an Eigen dense object, in a fixed order.
    template <class F>
    void for_each_array(F&& fn) { visit_arrays(*this, fn); }
    template <class F>
    void for_each_array(F&& fn) const { visit_arrays(*this, fn); }

    /// Flattened view used by gradient checks and tests.
    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& values);

private:
    template <class Self, class F>
    static void visit_arrays(Self& self, F& fn) {
        fn(self.input.weight);
        fn(self.input.bias);
        for (auto& layer : self.lstm) {
            fn(layer.w_input);
            fn(layer.w_recurrent);
            fn(layer.bias);
        }
        fn(self.hidden.weight);
        fn(self.hidden.bias);
        fn(self.output.weight);
        fn(self.output.bias);
    }
};

using Gradients = NetworkParams;

bool same_values(const NetworkParams& a, const NetworkParams& b);

struct RecurrentState {
    std::vector<Vector> h;
    std::vector<Vector> c;

    static RecurrentState zeros(const NetworkShape& shape);
};

struct LstmCache {
    Matrix inputs;  // in x T
    Matrix gates;   // 4H x T, post-activation
    Matrix cells;   // H x T
    Matrix cells_tanh;
    Matrix outputs;  // H x T
    Vector h0;
    Vector c0;
};

struct ForwardCache {
    std::uint64_t revision = 0;
    NetworkShape shape;
    Matrix observations;    // obs x T
    Matrix input_pre;       // H x T
    Matrix input_act;
    std::vector<LstmCache> lstm;
    Matrix hidden_pre;
    Matrix hidden_act;
};

struct ForwardResult {
    Matrix q;  // actions x T
    RecurrentState final_state;
    ForwardCache cache;
};

ForwardResult forward(const NetworkParams& params, const Matrix& observations,
                      const RecurrentState& initial);

/// Single-timestep forward without a cache; advances `state` in place.
Vector forward_step(const NetworkParams& params, const Vector& observation,
                    RecurrentState& state);

/// Backpropagation through time over the cached window. The initial recurrent
/// state is treated as a constant, so no gradient leaves the window.
Gradients bptt(const NetworkParams& params, const ForwardCache& cache, const Matrix& dloss_dq);

struct MseResult {
    double loss = 0.0;
    std::vector<double> grad;  // dLoss/dPredicted, mean convention
};

/// Mean squared error and its gradient 2 (p - y) / n.
MseResult mse_loss(const std::vector<double>& predicted, const std::vector<double>& targets);

struct ActionLoss {
    double loss = 0.0;
    Matrix dloss_dq;  // nonzero only at (action[t], t)
};

/// MSE between Q(action[t], t) and targets[t]; other action entries receive
/// zero gradient.
ActionLoss mse_loss_for_actions(const Matrix& q, const std::vector<std::size_t>& actions,
                                const std::vector<double>& targets);

struct AdamConfig {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::optional<double> max_grad_norm;  // global-norm clipping, off by default
};

struct AdamState {
    AdamConfig config;
    Gradients first_moment;
    Gradients second_moment;
    std::uint64_t step = 0;

    static AdamState for_params(const NetworkParams& params, AdamConfig config = {});
};

double global_norm(const Gradients& grads);

/// One bias-corrected Adam update. Throws NonFiniteGradient (leaving params
/// and state untouched) if any gradient entry is NaN or infinite.
void adam_step(NetworkParams& params, const Gradients& grads, AdamState& state);

inline NetworkParams copy_params(const NetworkParams& src) { return src; }

}  // namespace tpb::nn
