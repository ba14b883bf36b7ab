#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "oracles.hpp"
#include "tpb/checkpoint.hpp"
#include "tpb/nn.hpp"

using namespace tpb;
using namespace tpb::nn;

namespace {

Matrix random_inputs(std::size_t obs, std::size_t T, Rng& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Matrix x(static_cast<Eigen::Index>(obs), static_cast<Eigen::Index>(T));
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
    return x;
}

// Biases nudged away from zero so ReLU units are not sitting on their kink.
NetworkParams random_net(const NetworkShape& shape, Rng& rng) {
    NetworkParams p = NetworkParams::initialize(shape, rng);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    p.input.bias = p.input.bias.unaryExpr([&](double) { return u(rng); });
    p.hidden.bias = p.hidden.bias.unaryExpr([&](double) { return u(rng); });
    p.touch();
    return p;
}

double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-7});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("zero weights give zero Q-values") {
    const NetworkShape shape{3, 4, 2, 2};
    Rng rng(1);
    const auto fwd = forward(NetworkParams::zeros(shape), random_inputs(3, 5, rng), RecurrentState::zeros(shape));
    CHECK(fwd.q.isZero(0.0));
}

TEST_CASE("forward is deterministic and matches a scalar reimplementation") {
    const NetworkShape shape{3, 4, 2, 2};
    Rng rng(2);
    const auto p = random_net(shape, rng);
    const Matrix x = random_inputs(3, 5, rng);
    const auto a = forward(p, x, RecurrentState::zeros(shape));
    const auto b = forward(p, x, RecurrentState::zeros(shape));
    CHECK(a.q == b.q);

    std::vector<std::vector<double>> xs;
    for (Eigen::Index t = 0; t < x.cols(); ++t) xs.emplace_back(x.col(t).data(), x.col(t).data() + x.rows());
    const auto naive = oracle::naive_forward(p, xs);
    for (std::size_t t = 0; t < 5; ++t) {
        for (std::size_t k = 0; k < 2; ++k) {
            CHECK(std::abs(a.q(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) - naive[t][k]) < 1e-10);
        }
    }
}

TEST_CASE("forward_step reproduces the sequence forward") {
    const NetworkShape shape{3, 5, 2, 4};
    Rng rng(3);
    const auto p = random_net(shape, rng);
    const Matrix x = random_inputs(3, 7, rng);
    const auto seq = forward(p, x, RecurrentState::zeros(shape));
    auto state = RecurrentState::zeros(shape);
    for (Eigen::Index t = 0; t < 7; ++t) {
        const Vector q = forward_step(p, x.col(t), state);
        CHECK((q - seq.q.col(t)).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("shape errors") {
    const NetworkShape shape{3, 4, 1, 2};
    Rng rng(4);
    const auto p = NetworkParams::initialize(shape, rng);
    CHECK_THROWS_AS(forward(p, random_inputs(2, 3, rng), RecurrentState::zeros(shape)), ShapeError);
    const auto fwd = forward(p, random_inputs(3, 3, rng), RecurrentState::zeros(shape));
    CHECK_THROWS_AS(bptt(p, fwd.cache, Matrix::Zero(2, 4)), ShapeError);
}

TEST_CASE("initialization ranges and forget bias") {
    const NetworkShape shape{11, 16, 2, 10};
    Rng rng(5);
    const auto p = NetworkParams::initialize(shape, rng);
    CHECK(p.input.weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(11.0));
    CHECK(p.lstm[1].w_recurrent.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(16.0));
    CHECK(p.lstm[0].bias.segment(16, 16).isConstant(1.0));
    CHECK(p.lstm[0].bias.head(16).isZero(0.0));
    CHECK(p.output.bias.isZero(0.0));
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
    const NetworkShape shape{3, 4, 2, 2};
    Rng rng(6);
    const auto p = random_net(shape, rng);
    const auto fwd = forward(p, random_inputs(3, 4, rng), RecurrentState::zeros(shape));
    const auto g = bptt(p, fwd.cache, Matrix::Zero(2, 4));
    for (double v : g.flatten()) CHECK(v == 0.0);
}

TEST_CASE("analytic gradients match finite differences") {
    Rng rng(7);
    for (int trial = 0; trial < 6; ++trial) {
        const NetworkShape shape{3, static_cast<std::size_t>(2 + trial % 4), static_cast<std::size_t>(1 + trial % 2), 3};
        const auto p = random_net(shape, rng);
        const std::size_t T = 2 + static_cast<std::size_t>(trial % 4);
        const Matrix x = random_inputs(3, T, rng);
        std::vector<std::size_t> actions(T);
        std::vector<double> targets(T);
        for (std::size_t t = 0; t < T; ++t) {
            actions[t] = t % 3;
            targets[t] = std::uniform_real_distribution<double>(-1, 1)(rng);
        }
        auto loss_of = [&](const NetworkParams& q) {
            return mse_loss_for_actions(forward(q, x, RecurrentState::zeros(shape)).q, actions, targets).loss;
        };
        const auto fwd = forward(p, x, RecurrentState::zeros(shape));
        const auto loss = mse_loss_for_actions(fwd.q, actions, targets);
        const auto analytic = bptt(p, fwd.cache, loss.dloss_dq).flatten();
        const auto numeric = oracle::finite_difference(p, loss_of);
        CHECK(max_rel_error(analytic, numeric) < 1e-4);
    }
}

TEST_CASE("one-step single-unit net: output-layer gradient in closed form") {
    const NetworkShape shape{1, 1, 1, 1};
    Rng rng(8);
    auto p = random_net(shape, rng);
    Matrix x(1, 1);
    x(0, 0) = 0.7;
    const auto fwd = forward(p, x, RecurrentState::zeros(shape));
    const double q = fwd.q(0, 0);
    const double y = 0.25;
    const auto loss = mse_loss_for_actions(fwd.q, {0}, {y});
    CHECK(loss.loss == doctest::Approx((q - y) * (q - y)));
    const auto g = bptt(p, fwd.cache, loss.dloss_dq);
    const double hidden_act = fwd.cache.hidden_act(0, 0);
    CHECK(g.output.bias(0) == doctest::Approx(2.0 * (q - y)));
    CHECK(g.output.weight(0, 0) == doctest::Approx(2.0 * (q - y) * hidden_act));
}

TEST_CASE("mse loss conventions") {
    const auto r = mse_loss({1.0, 2.0}, {0.0, 0.0});
    CHECK(r.loss == 2.5);
    CHECK(r.grad == std::vector<double>{1.0, 2.0});
    CHECK(mse_loss({0.3, 0.4}, {0.3, 0.4}).loss == 0.0);
    CHECK_THROWS_AS(mse_loss({1.0}, {1.0, 2.0}), std::invalid_argument);

    Matrix q(3, 2);
    q << 1, 5, 2, 6, 3, 7;
    const auto a = mse_loss_for_actions(q, {2, 0}, {0.0, 0.0});
    CHECK(a.loss == doctest::Approx((9.0 + 25.0) / 2.0));
    CHECK(a.dloss_dq(2, 0) == doctest::Approx(3.0));
    CHECK(a.dloss_dq(0, 1) == doctest::Approx(5.0));
    CHECK(a.dloss_dq(0, 0) == 0.0);
    CHECK(a.dloss_dq(1, 1) == 0.0);
}

TEST_CASE("first Adam step moves every parameter by about the learning rate") {
    const NetworkShape shape{2, 3, 1, 2};
    Rng rng(9);
    auto p = NetworkParams::initialize(shape, rng);
    const auto before = p.flatten();
    auto state = AdamState::for_params(p);
    Gradients g = NetworkParams::zeros(shape);
    g.for_each_array([](auto& a) { a.setOnes(); });
    adam_step(p, g, state);
    const auto after = p.flatten();
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(before[i] - after[i] == doctest::Approx(0.001 / (1.0 + 1e-8)).epsilon(1e-9));
    }
    CHECK(state.step == 1);
}

TEST_CASE("Adam with zero gradients leaves parameters unchanged") {
    const NetworkShape shape{2, 3, 1, 2};
    Rng rng(10);
    auto p = NetworkParams::initialize(shape, rng);
    const auto before = p.flatten();
    auto state = AdamState::for_params(p);
    adam_step(p, NetworkParams::zeros(shape), state);
    CHECK(p.flatten() == before);
}

TEST_CASE("Adam is stateful: two steps differ from one step at double rate") {
    const NetworkShape shape{2, 3, 1, 2};
    Rng rng(11);
    const auto start = NetworkParams::initialize(shape, rng);
    Gradients g = NetworkParams::zeros(shape);
    std::uniform_real_distribution<double> u(-1, 1);
    g.for_each_array([&](auto& a) { a = a.unaryExpr([&](double) { return u(rng); }); });

    auto twice = start;
    auto s1 = AdamState::for_params(twice);
    adam_step(twice, g, s1);
    adam_step(twice, g, s1);

    auto doubled = start;
    AdamConfig cfg;
    cfg.learning_rate = 0.002;
    auto s2 = AdamState::for_params(doubled, cfg);
    adam_step(doubled, g, s2);
    CHECK_FALSE(same_values(twice, doubled));
}

TEST_CASE("non-finite gradients halt training and leave state untouched") {
    const NetworkShape shape{2, 3, 1, 2};
    Rng rng(12);
    auto p = NetworkParams::initialize(shape, rng);
    const auto before = p.flatten();
    auto state = AdamState::for_params(p);
    Gradients g = NetworkParams::zeros(shape);
    g.hidden.bias(1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(adam_step(p, g, state), NonFiniteGradient);
    CHECK(p.flatten() == before);
    CHECK(state.step == 0);
}

TEST_CASE("gradient clipping caps the global norm") {
    const NetworkShape shape{2, 3, 1, 2};
    Rng rng(13);
    auto p = NetworkParams::initialize(shape, rng);
    AdamConfig cfg;
    cfg.max_grad_norm = 1.0;
    auto clipped = AdamState::for_params(p, cfg);
    Gradients g = NetworkParams::zeros(shape);
    g.for_each_array([](auto& a) { a.setConstant(100.0); });
    CHECK(global_norm(g) > 1.0);
    adam_step(p, g, clipped);
    CHECK(std::sqrt(clipped.second_moment.flatten()[0] / 0.001) == doctest::Approx(100.0 / global_norm(g)));
}

TEST_CASE("a cache is rejected after the parameters change") {
    const NetworkShape shape{2, 3, 1, 2};
    Rng rng(14);
    auto p = NetworkParams::initialize(shape, rng);
    const auto fwd = forward(p, random_inputs(2, 3, rng), RecurrentState::zeros(shape));
    auto state = AdamState::for_params(p);
    Gradients g = NetworkParams::zeros(shape);
    g.for_each_array([](auto& a) { a.setOnes(); });
    adam_step(p, g, state);
    CHECK_THROWS_AS(bptt(p, fwd.cache, Matrix::Ones(2, 3)), StaleCache);
}

TEST_CASE("copies are independent and behave identically") {
    const NetworkShape shape{3, 4, 2, 2};
    Rng rng(15);
    auto online = NetworkParams::initialize(shape, rng);
    const NetworkParams target = copy_params(online);
    const Matrix x = random_inputs(3, 6, rng);
    const Matrix q_before = forward(target, x, RecurrentState::zeros(shape)).q;
    CHECK(forward(online, x, RecurrentState::zeros(shape)).q == q_before);
    CHECK(same_values(online, target));

    auto state = AdamState::for_params(online);
    Gradients g = NetworkParams::zeros(shape);
    g.for_each_array([](auto& a) { a.setOnes(); });
    adam_step(online, g, state);
    CHECK_FALSE(same_values(online, target));
    CHECK(forward(target, x, RecurrentState::zeros(shape)).q == q_before);
}

TEST_CASE("long rollouts keep the recurrent state finite") {
    const NetworkShape shape{3, 8, 2, 4};
    Rng rng(16);
    const auto p = NetworkParams::initialize(shape, rng);
    auto state = RecurrentState::zeros(shape);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int t = 0; t < 10000; ++t) {
        Vector x(3);
        x << u(rng), u(rng), u(rng);
        const Vector q = forward_step(p, x, state);
        REQUIRE(q.allFinite());
    }
    for (const auto& c : state.c) CHECK(c.allFinite());
}

TEST_CASE("checkpoint round trip") {
    const NetworkShape shape{3, 4, 2, 2};
    Rng rng(17);
    Checkpoint ck;
    ck.params = random_net(shape, rng);
    auto adam = AdamState::for_params(ck.params);
    Gradients g = NetworkParams::zeros(shape);
    g.for_each_array([](auto& a) { a.setConstant(0.3); });
    adam_step(ck.params, g, adam);
    ck.optimizer = adam;
    ck.counters["episode"] = 12;

    const auto path = std::filesystem::temp_directory_path() / "tpb_ckpt_test.json";
    save_checkpoint(path, ck);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.params.shape == shape);
    CHECK(same_values(back.params, ck.params));
    REQUIRE(back.optimizer.has_value());
    CHECK(back.optimizer->step == 1);
    CHECK(same_values(back.optimizer->second_moment, adam.second_moment));
    CHECK(back.counters.at("episode") == 12);
    const Matrix x = random_inputs(3, 4, rng);
    CHECK(forward(back.params, x, RecurrentState::zeros(shape)).q ==
          forward(ck.params, x, RecurrentState::zeros(shape)).q);
    std::filesystem::remove(path);

    Checkpoint bare;
    bare.params = ck.params;
    CHECK_FALSE(deserialize(serialize(bare)).optimizer.has_value());
    CHECK_THROWS(deserialize("{\"format\": \"other\"}"));
    CHECK_THROWS(load_checkpoint("/nonexistent/ckpt.json"));
}
