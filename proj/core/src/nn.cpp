#include "tpb/nn.hpp"

#include <atomic>
#include <cmath>
#include <span>
#include <string>

namespace tpb::nn {

namespace {

std::atomic<std::uint64_t> g_revision{1};

std::uint64_t next_revision() { return g_revision.fetch_add(1, std::memory_order_relaxed); }

std::vector<std::span<double>> spans(NetworkParams& p) {
    std::vector<std::span<double>> out;
    p.for_each_array([&](auto& a) {
        out.emplace_back(a.data(), static_cast<std::size_t>(a.size()));
    });
    return out;
}

std::vector<std::span<const double>> spans(const NetworkParams& p) {
    std::vector<std::span<const double>> out;
    p.for_each_array([&](const auto& a) {
        out.emplace_back(a.data(), static_cast<std::size_t>(a.size()));
    });
    return out;
}

void fill_uniform(Matrix& m, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
    }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_shape(const NetworkParams& params, const Matrix& observations) {
    if (static_cast<std::size_t>(observations.rows()) != params.shape.obs_dim) {
        throw ShapeError("observation dimension " + std::to_string(observations.rows()) +
                         " does not match network input " +
                         std::to_string(params.shape.obs_dim));
    }
    if (observations.cols() == 0) throw ShapeError("empty observation sequence");
}

void check_state(const NetworkParams& params, const RecurrentState& state) {
    const auto layers = params.shape.lstm_layers;
    const auto h = static_cast<Eigen::Index>(params.shape.hidden);
    if (state.h.size() != layers || state.c.size() != layers) {
        throw ShapeError("recurrent state has the wrong number of layers");
    }
    for (std::size_t l = 0; l < layers; ++l) {
        if (state.h[l].size() != h || state.c[l].size() != h) {
            throw ShapeError("recurrent state width does not match hidden size");
        }
    }
}

// One LSTM timestep. `pre` holds W_x x_t + b on entry and the activated gates
// on exit.
void lstm_cell(const LstmLayer& layer, Eigen::Index hidden, Eigen::Ref<Vector> pre,
               Vector& h, Vector& c, Vector& c_tanh) {
    pre.noalias() += layer.w_recurrent * h;
    for (Eigen::Index k = 0; k < hidden; ++k) {
        const double i = sigmoid(pre(k));
        const double f = sigmoid(pre(hidden + k));
        const double g = std::tanh(pre(2 * hidden + k));
        const double o = sigmoid(pre(3 * hidden + k));
        pre(k) = i;
        pre(hidden + k) = f;
        pre(2 * hidden + k) = g;
        pre(3 * hidden + k) = o;
        c(k) = f * c(k) + i * g;
        c_tanh(k) = std::tanh(c(k));
        h(k) = o * c_tanh(k);
    }
}

}  // namespace

NetworkParams NetworkParams::zeros(const NetworkShape& shape) {
    if (shape.obs_dim == 0 || shape.hidden == 0 || shape.actions == 0) {
        throw ShapeError("network dimensions must be positive");
    }
    const auto o = static_cast<Eigen::Index>(shape.obs_dim);
    const auto h = static_cast<Eigen::Index>(shape.hidden);
    const auto a = static_cast<Eigen::Index>(shape.actions);
    NetworkParams p;
    p.shape = shape;
    p.input = {Matrix::Zero(h, o), Vector::Zero(h)};
    p.lstm.resize(shape.lstm_layers);
    for (auto& layer : p.lstm) {
        layer = {Matrix::Zero(4 * h, h), Matrix::Zero(4 * h, h), Vector::Zero(4 * h)};
    }
    p.hidden = {Matrix::Zero(h, h), Vector::Zero(h)};
    p.output = {Matrix::Zero(a, h), Vector::Zero(a)};
    p.revision = next_revision();
    return p;
}

NetworkParams NetworkParams::initialize(const NetworkShape& shape, Rng& rng) {
    NetworkParams p = zeros(shape);
    const auto h = static_cast<Eigen::Index>(shape.hidden);
    fill_uniform(p.input.weight, 1.0 / std::sqrt(static_cast<double>(shape.obs_dim)), rng);
    for (auto& layer : p.lstm) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.w_input.cols()));
        fill_uniform(layer.w_input, bound, rng);
        fill_uniform(layer.w_recurrent, 1.0 / std::sqrt(static_cast<double>(h)), rng);
        layer.bias.segment(h, h).setOnes();
    }
    fill_uniform(p.hidden.weight, 1.0 / std::sqrt(static_cast<double>(h)), rng);
    fill_uniform(p.output.weight, 1.0 / std::sqrt(static_cast<double>(h)), rng);
    return p;
}

std::size_t NetworkParams::parameter_count() const {
    std::size_t total = 0;
    for_each_array([&](const auto& a) { total += static_cast<std::size_t>(a.size()); });
    return total;
}

void NetworkParams::touch() { revision = next_revision(); }

std::vector<double> NetworkParams::flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (auto s : spans(*this)) out.insert(out.end(), s.begin(), s.end());
    return out;
}

void NetworkParams::unflatten(const std::vector<double>& values) {
    if (values.size() != parameter_count()) throw ShapeError("flat parameter vector has wrong size");
    std::size_t offset = 0;
    for (auto s : spans(*this)) {
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), s.size(), s.begin());
        offset += s.size();
    }
    touch();
}

bool same_values(const NetworkParams& a, const NetworkParams& b) {
    if (!(a.shape == b.shape)) return false;
    const auto sa = spans(a);
    const auto sb = spans(b);
    for (std::size_t i = 0; i < sa.size(); ++i) {
        if (!std::equal(sa[i].begin(), sa[i].end(), sb[i].begin())) return false;
    }
    return true;
}

RecurrentState RecurrentState::zeros(const NetworkShape& shape) {
    RecurrentState s;
    const auto h = static_cast<Eigen::Index>(shape.hidden);
    s.h.assign(shape.lstm_layers, Vector::Zero(h));
    s.c.assign(shape.lstm_layers, Vector::Zero(h));
    return s;
}

ForwardResult forward(const NetworkParams& params, const Matrix& observations,
                      const RecurrentState& initial) {
    check_shape(params, observations);
    check_state(params, initial);
    const Eigen::Index steps = observations.cols();
    const auto hidden = static_cast<Eigen::Index>(params.shape.hidden);

    ForwardResult out;
    ForwardCache& cache = out.cache;
    cache.revision = params.revision;
    cache.shape = params.shape;
    cache.observations = observations;
    cache.input_pre = params.input.weight * observations;
    cache.input_pre.colwise() += params.input.bias;
    cache.input_act = cache.input_pre.cwiseMax(0.0);

    out.final_state = initial;
    cache.lstm.resize(params.lstm.size());
    const Matrix* layer_input = &cache.input_act;
    Vector c_tanh(hidden);
    for (std::size_t l = 0; l < params.lstm.size(); ++l) {
        const LstmLayer& layer = params.lstm[l];
        LstmCache& lc = cache.lstm[l];
        lc.inputs = *layer_input;
        lc.h0 = initial.h[l];
        lc.c0 = initial.c[l];
        lc.gates = layer.w_input * lc.inputs;
        lc.gates.colwise() += layer.bias;
        lc.cells.resize(hidden, steps);
        lc.cells_tanh.resize(hidden, steps);
        lc.outputs.resize(hidden, steps);
        Vector& h = out.final_state.h[l];
        Vector& c = out.final_state.c[l];
        for (Eigen::Index t = 0; t < steps; ++t) {
            lstm_cell(layer, hidden, lc.gates.col(t), h, c, c_tanh);
            lc.cells.col(t) = c;
            lc.cells_tanh.col(t) = c_tanh;
            lc.outputs.col(t) = h;
        }
        layer_input = &lc.outputs;
    }

    cache.hidden_pre = params.hidden.weight * *layer_input;
    cache.hidden_pre.colwise() += params.hidden.bias;
    cache.hidden_act = cache.hidden_pre.cwiseMax(0.0);
    out.q = params.output.weight * cache.hidden_act;
    out.q.colwise() += params.output.bias;
    return out;
}

Vector forward_step(const NetworkParams& params, const Vector& observation,
                    RecurrentState& state) {
    if (static_cast<std::size_t>(observation.size()) != params.shape.obs_dim) {
        throw ShapeError("observation dimension does not match network input");
    }
    check_state(params, state);
    const auto hidden = static_cast<Eigen::Index>(params.shape.hidden);
    Vector x = (params.input.weight * observation + params.input.bias).cwiseMax(0.0);
    Vector gates;
    Vector c_tanh(hidden);
    for (std::size_t l = 0; l < params.lstm.size(); ++l) {
        const LstmLayer& layer = params.lstm[l];
        gates = layer.w_input * x + layer.bias;
        lstm_cell(layer, hidden, gates, state.h[l], state.c[l], c_tanh);
        x = state.h[l];
    }
    Vector z = (params.hidden.weight * x + params.hidden.bias).cwiseMax(0.0);
    return params.output.weight * z + params.output.bias;
}

Gradients bptt(const NetworkParams& params, const ForwardCache& cache, const Matrix& dloss_dq) {
    if (cache.revision != params.revision || !(cache.shape == params.shape)) {
        throw StaleCache("forward cache does not belong to these parameters");
    }
    const Eigen::Index steps = cache.observations.cols();
    if (dloss_dq.rows() != static_cast<Eigen::Index>(params.shape.actions) ||
        dloss_dq.cols() != steps) {
        throw ShapeError("loss gradient shape does not match the cached forward pass");
    }
    const auto hidden = static_cast<Eigen::Index>(params.shape.hidden);
    Gradients g = Gradients::zeros(params.shape);

    g.output.weight.noalias() = dloss_dq * cache.hidden_act.transpose();
    g.output.bias = dloss_dq.rowwise().sum();
    Matrix d_hidden = params.output.weight.transpose() * dloss_dq;
    d_hidden = d_hidden.cwiseProduct((cache.hidden_pre.array() > 0.0).cast<double>().matrix());

    const Matrix& top = params.lstm.empty() ? cache.input_act : cache.lstm.back().outputs;
    g.hidden.weight.noalias() = d_hidden * top.transpose();
    g.hidden.bias = d_hidden.rowwise().sum();
    Matrix d_out = params.hidden.weight.transpose() * d_hidden;  // dL/d(layer outputs)

    Matrix d_gates(4 * hidden, steps);
    Matrix prev_h(hidden, steps);
    Vector dh_next(hidden);
    Vector dc_next(hidden);
    for (std::size_t li = params.lstm.size(); li-- > 0;) {
        const LstmLayer& layer = params.lstm[li];
        const LstmCache& lc = cache.lstm[li];
        LstmLayer& gl = g.lstm[li];
        dh_next.setZero();
        dc_next.setZero();
        for (Eigen::Index t = steps - 1; t >= 0; --t) {
            const auto gate = lc.gates.col(t);
            auto dz = d_gates.col(t);
            for (Eigen::Index k = 0; k < hidden; ++k) {
                const double i = gate(k);
                const double f = gate(hidden + k);
                const double gg = gate(2 * hidden + k);
                const double o = gate(3 * hidden + k);
                const double ct = lc.cells_tanh(k, t);
                const double c_prev = t > 0 ? lc.cells(k, t - 1) : lc.c0(k);
                const double dh = d_out(k, t) + dh_next(k);
                const double dc = dh * o * (1.0 - ct * ct) + dc_next(k);
                dz(k) = dc * gg * i * (1.0 - i);
                dz(hidden + k) = dc * c_prev * f * (1.0 - f);
                dz(2 * hidden + k) = dc * i * (1.0 - gg * gg);
                dz(3 * hidden + k) = dh * ct * o * (1.0 - o);
                dc_next(k) = dc * f;
            }
            dh_next.noalias() = layer.w_recurrent.transpose() * dz;
            prev_h.col(t) = t > 0 ? Vector(lc.outputs.col(t - 1)) : lc.h0;
        }
        gl.w_input.noalias() = d_gates * lc.inputs.transpose();
        gl.w_recurrent.noalias() = d_gates * prev_h.transpose();
        gl.bias = d_gates.rowwise().sum();
        d_out.noalias() = layer.w_input.transpose() * d_gates;
    }

    const Matrix d_input =
        d_out.cwiseProduct((cache.input_pre.array() > 0.0).cast<double>().matrix());
    g.input.weight.noalias() = d_input * cache.observations.transpose();
    g.input.bias = d_input.rowwise().sum();
    return g;
}

MseResult mse_loss(const std::vector<double>& predicted, const std::vector<double>& targets) {
    if (predicted.size() != targets.size()) {
        throw std::invalid_argument("mse_loss: predicted and target lengths differ");
    }
    if (predicted.empty()) throw std::invalid_argument("mse_loss: empty batch");
    MseResult out;
    out.grad.resize(predicted.size());
    const double n = static_cast<double>(predicted.size());
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double diff = predicted[i] - targets[i];
        out.loss += diff * diff;
        out.grad[i] = 2.0 * diff / n;
    }
    out.loss /= n;
    return out;
}

ActionLoss mse_loss_for_actions(const Matrix& q, const std::vector<std::size_t>& actions,
                                const std::vector<double>& targets) {
    if (actions.size() != static_cast<std::size_t>(q.cols())) {
        throw std::invalid_argument("mse_loss_for_actions: one action per timestep required");
    }
    std::vector<double> predicted(actions.size());
    for (std::size_t t = 0; t < actions.size(); ++t) {
        if (actions[t] >= static_cast<std::size_t>(q.rows())) {
            throw std::invalid_argument("mse_loss_for_actions: action index out of range");
        }
        predicted[t] = q(static_cast<Eigen::Index>(actions[t]), static_cast<Eigen::Index>(t));
    }
    const MseResult mse = mse_loss(predicted, targets);
    ActionLoss out;
    out.loss = mse.loss;
    out.dloss_dq = Matrix::Zero(q.rows(), q.cols());
    for (std::size_t t = 0; t < actions.size(); ++t) {
        out.dloss_dq(static_cast<Eigen::Index>(actions[t]), static_cast<Eigen::Index>(t)) =
            mse.grad[t];
    }
    return out;
}

AdamState AdamState::for_params(const NetworkParams& params, AdamConfig config) {
    AdamState s;
    s.config = config;
    s.first_moment = Gradients::zeros(params.shape);
    s.second_moment = Gradients::zeros(params.shape);
    return s;
}

double global_norm(const Gradients& grads) {
    double sq = 0.0;
    grads.for_each_array([&](const auto& a) { sq += a.squaredNorm(); });
    return std::sqrt(sq);
}

void adam_step(NetworkParams& params, const Gradients& grads, AdamState& state) {
    if (!(params.shape == grads.shape) || !(state.first_moment.shape == params.shape)) {
        throw ShapeError("adam_step: parameter, gradient and moment shapes differ");
    }
    bool finite = true;
    grads.for_each_array([&](const auto& a) { finite = finite && a.allFinite(); });
    if (!finite) throw NonFiniteGradient("non-finite gradient; training halted");

    const AdamConfig& cfg = state.config;
    double scale = 1.0;
    if (cfg.max_grad_norm) {
        const double norm = global_norm(grads);
        if (norm > *cfg.max_grad_norm && norm > 0.0) scale = *cfg.max_grad_norm / norm;
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(cfg.beta1, t);
    const double correction2 = 1.0 - std::pow(cfg.beta2, t);
    const double step_size = cfg.learning_rate / correction1;
    const double sqrt_c2 = std::sqrt(correction2);

    auto p = spans(params);
    auto g = spans(grads);
    auto m = spans(state.first_moment);
    auto v = spans(state.second_moment);
    for (std::size_t a = 0; a < p.size(); ++a) {
        for (std::size_t i = 0; i < p[a].size(); ++i) {
            const double gi = g[a][i] * scale;
            m[a][i] = cfg.beta1 * m[a][i] + (1.0 - cfg.beta1) * gi;
            v[a][i] = cfg.beta2 * v[a][i] + (1.0 - cfg.beta2) * gi * gi;
            p[a][i] -= step_size * m[a][i] / (std::sqrt(v[a][i]) / sqrt_c2 + cfg.epsilon);
        }
    }
    params.touch();
}

}  // namespace tpb::nn
