#pragma once

// Damped Gauss-Newton (Levenberg) solver shared by the homography refiners.

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <limits>

#include "calibrefine/error.hpp"

namespace calibrefine {

struct LmSettings {
    double initial_lambda = 1e-3;
    double lambda_factor = 10.0;
    int max_iterations = 100;
    double relative_tolerance = 1e-10;
    double max_lambda = 1e12;
};

struct LmResult {
    Eigen::VectorXd params;
    double initial_cost = 0.0;
    double cost = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// A least-squares problem: fills residuals (and the Jacobian when requested) at x and
/// returns false when x is not a valid evaluation point.
template <typename P>
concept LeastSquaresProblem = requires(const P& p, const Eigen::VectorXd& x, Eigen::VectorXd& r,
                                       Eigen::MatrixXd* jac) {
    { p.evaluate(x, r, jac) } -> std::same_as<bool>;
};

/// One damped step on column-equilibrated normal equations. Scaling each Jacobian column
/// to unit norm makes lambda * I act like lambda * diag(J^T J) in the original variables.
inline auto damped_step(const Eigen::MatrixXd& jac, const Eigen::VectorXd& res, double lambda)
    -> Eigen::VectorXd {
    const Eigen::Index n = jac.cols();
    Eigen::VectorXd scale(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double norm = jac.col(j).norm();
        scale(j) = norm > 0.0 ? norm : 1.0;
    }
    const Eigen::MatrixXd js = jac * scale.cwiseInverse().asDiagonal();
    Eigen::MatrixXd normal = js.transpose() * js;
    normal.diagonal().array() += lambda;
    const Eigen::VectorXd gradient = js.transpose() * res;
    const Eigen::VectorXd step_scaled = normal.ldlt().solve(-gradient);
    return step_scaled.cwiseQuotient(scale);
}

/// Minimizes ||r(x)||^2 from x0. The returned params never have higher cost than x0.
template <LeastSquaresProblem P>
auto levenberg_marquardt(const P& problem, Eigen::VectorXd x0, const LmSettings& settings = {})
    -> LmResult {
    LmResult result;
    Eigen::VectorXd res;
    Eigen::MatrixXd jac;
    if (!problem.evaluate(x0, res, &jac)) {
        throw CalibError(ErrorCode::DegenerateProjection, "initial estimate is not evaluable");
    }
    result.params = std::move(x0);
    result.cost = res.squaredNorm();
    result.initial_cost = result.cost;
    if (result.cost == 0.0) {
        result.converged = true;
        return result;
    }

    double lambda = settings.initial_lambda;
    Eigen::VectorXd trial_res;
    while (result.iterations < settings.max_iterations) {
        ++result.iterations;
        const Eigen::VectorXd step = damped_step(jac, res, lambda);
        if (!step.allFinite()) {
            lambda *= settings.lambda_factor;
            if (lambda > settings.max_lambda) {
                result.converged = true;
                break;
            }
            continue;
        }
        const Eigen::VectorXd trial = result.params + step;
        const bool ok = problem.evaluate(trial, trial_res, nullptr);
        const double trial_cost = ok ? trial_res.squaredNorm()
                                     : std::numeric_limits<double>::infinity();
        if (trial_cost < result.cost) {
            const double relative_decrease = (result.cost - trial_cost) / result.cost;
            result.params = trial;
            result.cost = trial_cost;
            lambda /= settings.lambda_factor;
            if (relative_decrease < settings.relative_tolerance || trial_cost == 0.0) {
                result.converged = true;
                break;
            }
            problem.evaluate(result.params, res, &jac);
        } else {
            lambda *= settings.lambda_factor;
            if (lambda > settings.max_lambda) {
                // No descent direction left at machine precision.
                result.converged = true;
                break;
            }
        }
    }
    return result;
}

}  // namespace calibrefine
