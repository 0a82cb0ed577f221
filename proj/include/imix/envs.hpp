#pragma once

#include "core.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string_view>

namespace imix
{
enum class EnvId
{
    CartPole,
    Acrobot,
    ContinuousCartPole,
    ContinuousCartPoleHard,
};

enum class ActionKind
{
    Discrete2,
    Discrete3,
    Continuous,
};

inline std::string_view to_string(EnvId id)
{
    switch (id)
    {
    case EnvId::CartPole:
        return "cartpole";
    case EnvId::Acrobot:
        return "acrobot";
    case EnvId::ContinuousCartPole:
        return "continuous_cartpole";
    case EnvId::ContinuousCartPoleHard:
        return "continuous_cartpole_hard";
    }
    return "?";
}

inline std::optional<EnvId> parse_env(std::string_view name)
{
    for (auto id : {EnvId::CartPole, EnvId::Acrobot, EnvId::ContinuousCartPole, EnvId::ContinuousCartPoleHard})
        if (name == to_string(id))
            return id;
    return std::nullopt;
}

struct CartPoleConstants
{
    double gravity = 9.8;
    double cart_mass = 1.0;
    double pole_mass = 0.1;
    double half_length = 0.5;
    double force_magnitude = 10.0;
    double dt = 0.02;
    double angle_threshold = 15.0 * std::numbers::pi / 180.0;
    double x_threshold = 2.4;
};

/// 12 degrees, the threshold used by the common gym implementation.
constexpr double gym_angle_threshold = 12.0 * std::numbers::pi / 180.0;

struct AcrobotConstants
{
    double gravity = 9.8;
    double link_length_1 = 1.0;
    double link_mass_1 = 1.0;
    double link_mass_2 = 1.0;
    double link_com_1 = 0.5;
    double link_com_2 = 0.5;
    double link_moi = 1.0;
    double max_vel_1 = 4.0 * std::numbers::pi;
    double max_vel_2 = 9.0 * std::numbers::pi;
    double dt = 0.2;
};

struct EnvSpec
{
    EnvId id = EnvId::CartPole;
    int obs_dim = 4;
    ActionKind action_kind = ActionKind::Discrete2;
    int max_steps = 200;
    CartPoleConstants cartpole{};
    AcrobotConstants acrobot{};

    static EnvSpec make(EnvId id)
    {
        EnvSpec spec;
        spec.id = id;
        switch (id)
        {
        case EnvId::CartPole:
            break;
        case EnvId::Acrobot:
            spec.obs_dim = 6;
            spec.action_kind = ActionKind::Discrete3;
            break;
        case EnvId::ContinuousCartPole:
        case EnvId::ContinuousCartPoleHard:
            spec.action_kind = ActionKind::Continuous;
            break;
        }
        return spec;
    }
};

inline int action_outputs(ActionKind kind)
{
    switch (kind)
    {
    case ActionKind::Discrete2:
        return 2;
    case ActionKind::Discrete3:
        return 3;
    case ActionKind::Continuous:
        return 1;
    }
    return 0;
}

/// Fully connected obs -> 8 -> 8 -> out network with tanh hidden units.
/// Parameters are laid out layer by layer as [W (out x in, row-major), b].
struct PolicySpec
{
    static constexpr int hidden = 8;
    std::array<int, 4> layers{};
    ActionKind action_kind = ActionKind::Discrete2;

    static PolicySpec for_env(const EnvSpec &env)
    {
        return {{env.obs_dim, hidden, hidden, action_outputs(env.action_kind)}, env.action_kind};
    }

    int param_count() const
    {
        int total = 0;
        for (std::size_t l = 0; l + 1 < layers.size(); ++l)
            total += layers[l + 1] * layers[l] + layers[l + 1];
        return total;
    }
};

/// Discrete policies produce an index; continuous ones a value in [-1, 1].
struct Action
{
    int index = 0;
    double value = 0.0;
};

namespace detail
{
constexpr int max_width = 8;

inline void dense_layer(std::span<const double> params, std::size_t &offset, int in, int out, const double *x,
                        double *y)
{
    const double *w = params.data() + offset;
    const double *b = w + static_cast<std::ptrdiff_t>(in) * out;
    for (int o = 0; o < out; ++o)
    {
        double acc = b[o];
        for (int i = 0; i < in; ++i)
            acc += w[o * in + i] * x[i];
        y[o] = acc;
    }
    offset += static_cast<std::size_t>(in * out + out);
}
} // namespace detail

/// Forward pass. Discrete: argmax of the linear outputs, ties to the lowest
/// index. Continuous: tanh of the single output.
inline Action policy_forward(std::span<const double> params, const PolicySpec &spec, std::span<const double> obs)
{
    require(static_cast<int>(params.size()) == spec.param_count(), "policy_forward: parameter length mismatch");
    require(static_cast<int>(obs.size()) == spec.layers[0], "policy_forward: observation length mismatch");
    static_assert(PolicySpec::hidden <= detail::max_width);

    std::array<double, detail::max_width> h1{};
    std::array<double, detail::max_width> h2{};
    std::array<double, detail::max_width> out{};
    std::size_t offset = 0;
    detail::dense_layer(params, offset, spec.layers[0], spec.layers[1], obs.data(), h1.data());
    for (int i = 0; i < spec.layers[1]; ++i)
        h1[static_cast<std::size_t>(i)] = std::tanh(h1[static_cast<std::size_t>(i)]);
    detail::dense_layer(params, offset, spec.layers[1], spec.layers[2], h1.data(), h2.data());
    for (int i = 0; i < spec.layers[2]; ++i)
        h2[static_cast<std::size_t>(i)] = std::tanh(h2[static_cast<std::size_t>(i)]);
    detail::dense_layer(params, offset, spec.layers[2], spec.layers[3], h2.data(), out.data());

    Action action;
    if (spec.action_kind == ActionKind::Continuous)
    {
        action.value = std::tanh(out[0]);
        return action;
    }
    for (int o = 1; o < spec.layers[3]; ++o)
        if (out[static_cast<std::size_t>(o)] > out[static_cast<std::size_t>(action.index)])
            action.index = o;
    return action;
}

struct CartPoleState
{
    double x = 0.0;
    double x_dot = 0.0;
    double theta = 0.0;
    double theta_dot = 0.0;
    int elapsed = 0;

    std::array<double, 4> observation() const { return {x, x_dot, theta, theta_dot}; }
};

template <class State>
struct StepResult
{
    State state;
    double reward = 0.0;
    bool done = false;
    bool failed = false; // true when a fail/goal condition (not the step limit) ended the episode
};

/// Applied force for an action: discrete 0/1 map to -F/+F, continuous values
/// are clamped to [-1, 1] and scaled by F.
inline double cartpole_force(const Action &action, const EnvSpec &spec)
{
    const double f = spec.cartpole.force_magnitude;
    if (spec.action_kind == ActionKind::Continuous)
        return std::clamp(action.value, -1.0, 1.0) * f;
    return action.index == 1 ? f : -f;
}

/// Explicit Euler cart-pole step. Reward +1 for every step taken.
inline StepResult<CartPoleState> cartpole_step(const CartPoleState &s, const Action &action, const EnvSpec &spec)
{
    const auto &c = spec.cartpole;
    const double force = cartpole_force(action, spec);
    const double total_mass = c.cart_mass + c.pole_mass;
    const double polemass_length = c.pole_mass * c.half_length;
    const double cos_t = std::cos(s.theta);
    const double sin_t = std::sin(s.theta);

    const double temp = (force + polemass_length * s.theta_dot * s.theta_dot * sin_t) / total_mass;
    const double theta_acc = (c.gravity * sin_t - cos_t * temp) /
                             (c.half_length * (4.0 / 3.0 - c.pole_mass * cos_t * cos_t / total_mass));
    const double x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;

    StepResult<CartPoleState> r;
    r.state.x = s.x + c.dt * s.x_dot;
    r.state.x_dot = s.x_dot + c.dt * x_acc;
    r.state.theta = s.theta + c.dt * s.theta_dot;
    r.state.theta_dot = s.theta_dot + c.dt * theta_acc;
    r.state.elapsed = s.elapsed + 1;
    r.reward = 1.0;
    r.failed = std::abs(r.state.x) > c.x_threshold || std::abs(r.state.theta) > c.angle_threshold;
    r.done = r.failed || r.state.elapsed >= spec.max_steps;
    return r;
}

struct AcrobotState
{
    double theta1 = 0.0;
    double theta2 = 0.0;
    double dtheta1 = 0.0;
    double dtheta2 = 0.0;
    int elapsed = 0;

    std::array<double, 6> observation() const
    {
        return {std::cos(theta1), std::sin(theta1), std::cos(theta2), std::sin(theta2), dtheta1, dtheta2};
    }
};

/// Time derivative of (theta1, theta2, dtheta1, dtheta2) for the two-link
/// underactuated arm with torque on the middle joint.
inline std::array<double, 4> acrobot_derivatives(const std::array<double, 4> &s, double torque,
                                                 const AcrobotConstants &c)
{
    const double m1 = c.link_mass_1, m2 = c.link_mass_2;
    const double l1 = c.link_length_1, lc1 = c.link_com_1, lc2 = c.link_com_2;
    const double i1 = c.link_moi, i2 = c.link_moi, g = c.gravity;
    const double theta1 = s[0], theta2 = s[1], dtheta1 = s[2], dtheta2 = s[3];

    const double d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * std::cos(theta2)) + i1 + i2;
    const double d2 = m2 * (lc2 * lc2 + l1 * lc2 * std::cos(theta2)) + i2;
    const double phi2 = m2 * lc2 * g * std::sin(theta1 + theta2);
    const double phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * std::sin(theta2) -
                        2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * std::sin(theta2) +
                        (m1 * lc1 + m2 * l1) * g * std::sin(theta1) + phi2;
    const double ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * std::sin(theta2) - phi2) /
                            (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    const double ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    return {dtheta1, dtheta2, ddtheta1, ddtheta2};
}

/// One classical RK4 step of length h with constant torque.
inline std::array<double, 4> acrobot_rk4(const std::array<double, 4> &s, double torque, double h,
                                         const AcrobotConstants &c)
{
    auto axpy = [](const std::array<double, 4> &x, double a, const std::array<double, 4> &k) {
        return std::array<double, 4>{x[0] + a * k[0], x[1] + a * k[1], x[2] + a * k[2], x[3] + a * k[3]};
    };
    const auto k1 = acrobot_derivatives(s, torque, c);
    const auto k2 = acrobot_derivatives(axpy(s, h / 2.0, k1), torque, c);
    const auto k3 = acrobot_derivatives(axpy(s, h / 2.0, k2), torque, c);
    const auto k4 = acrobot_derivatives(axpy(s, h, k3), torque, c);
    std::array<double, 4> out{};
    for (std::size_t i = 0; i < 4; ++i)
        out[i] = s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    return out;
}

/// Wraps an angle into [-pi, pi).
inline double wrap_angle(double x)
{
    constexpr double two_pi = 2.0 * std::numbers::pi;
    x = std::fmod(x + std::numbers::pi, two_pi);
    if (x < 0.0)
        x += two_pi;
    return x - std::numbers::pi;
}

/// Tip height above the pivot, in link lengths: -cos(t1) - cos(t1 + t2).
inline double acrobot_tip_height(const AcrobotState &s) { return -std::cos(s.theta1) - std::cos(s.theta1 + s.theta2); }

/// Actions 0, 1, 2 apply torque -1, 0, +1. Reward -1 per step; the episode
/// succeeds once the tip is more than one link above the pivot.
inline StepResult<AcrobotState> acrobot_step(const AcrobotState &s, const Action &action, const EnvSpec &spec)
{
    const auto &c = spec.acrobot;
    const double torque = static_cast<double>(action.index - 1);
    const auto next = acrobot_rk4({s.theta1, s.theta2, s.dtheta1, s.dtheta2}, torque, c.dt, c);

    StepResult<AcrobotState> r;
    r.state.theta1 = wrap_angle(next[0]);
    r.state.theta2 = wrap_angle(next[1]);
    r.state.dtheta1 = std::clamp(next[2], -c.max_vel_1, c.max_vel_1);
    r.state.dtheta2 = std::clamp(next[3], -c.max_vel_2, c.max_vel_2);
    r.state.elapsed = s.elapsed + 1;
    r.reward = -1.0;
    r.failed = acrobot_tip_height(r.state) > 1.0;
    r.done = r.failed || r.state.elapsed >= spec.max_steps;
    return r;
}

enum class Termination
{
    Condition, // pole fell / cart left / tip reached the goal height
    Timeout,
};

struct EpisodeResult
{
    double total_return = 0.0;
    int steps = 0;
    Termination terminated_by = Termination::Timeout;
};

namespace detail
{
template <class State, class Step>
EpisodeResult run_episode(State state, Step &&step, std::span<const double> params, const PolicySpec &policy,
                          bool delayed_reward)
{
    EpisodeResult result;
    double withheld = 0.0;
    while (true)
    {
        const auto obs = state.observation();
        const Action action = policy_forward(params, policy, obs);
        const auto r = step(state, action);
        state = r.state;
        ++result.steps;
        if (delayed_reward)
            withheld += r.reward;
        else
            result.total_return += r.reward;
        if (r.done)
        {
            result.terminated_by = r.failed ? Termination::Condition : Termination::Timeout;
            break;
        }
    }
    if (delayed_reward)
        result.total_return += withheld;
    return result;
}
} // namespace detail

/// Runs one episode of the deterministic policy. The initial state is the
/// only randomness: uniform in +-0.05 for cart-pole states, +-0.1 for the
/// acrobot angles and velocities. ContinuousCartPoleHard pays nothing per
/// step and the summed reward once at termination.
inline EpisodeResult rollout(const EnvSpec &env, std::span<const double> params, Rng &episode_rng)
{
    const PolicySpec policy = PolicySpec::for_env(env);
    require(static_cast<int>(params.size()) == policy.param_count(), "rollout: parameter length does not match env");
    auto uniform = [&](double half_width) { return (2.0 * episode_rng.uniform() - 1.0) * half_width; };

    if (env.id == EnvId::Acrobot)
    {
        AcrobotState s;
        s.theta1 = uniform(0.1);
        s.theta2 = uniform(0.1);
        s.dtheta1 = uniform(0.1);
        s.dtheta2 = uniform(0.1);
        return detail::run_episode(
            s, [&](const AcrobotState &st, const Action &a) { return acrobot_step(st, a, env); }, params, policy,
            false);
    }
    CartPoleState s;
    s.x = uniform(0.05);
    s.x_dot = uniform(0.05);
    s.theta = uniform(0.05);
    s.theta_dot = uniform(0.05);
    return detail::run_episode(
        s, [&](const CartPoleState &st, const Action &a) { return cartpole_step(st, a, env); }, params, policy,
        env.id == EnvId::ContinuousCartPoleHard);
}

} // namespace imix
