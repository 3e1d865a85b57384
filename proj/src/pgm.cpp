#include "eitcs/pgm.hpp"

#include <cmath>

namespace eitcs {

std::string to_string(Variant v)
{
    switch (v) {
    case Variant::L1:
        return "pgm-l1";
    case Variant::TV:
        return "pgm-tv";
    case Variant::L1Mask:
        return "pgm-l1-mo";
    case Variant::TVMask:
        return "pgm-tv-mo";
    }
    return "pgm-tv";
}

Variant parse_variant(const std::string& s)
{
    for (Variant v : kAllVariants)
        if (to_string(v) == s)
            return v;
    throw InputError("unknown variant '" + s + "'");
}

Penalty penalty_of(Variant v)
{
    return v == Variant::L1 || v == Variant::L1Mask ? Penalty::L1 : Penalty::TV;
}

bool uses_mask(Variant v)
{
    return v == Variant::L1Mask || v == Variant::TVMask;
}

RegularizerConfig SolverConfig::effective_regularizer() const
{
    RegularizerConfig r = regularizer;
    r.penalty = penalty_of(variant);
    if (!uses_mask(variant))
        r.mask.reset();
    return r;
}

void SolverConfig::validate(Eigen::Index n) const
{
    if (!(lambda > 0.0) || !std::isfinite(lambda))
        throw InputError("lambda must be positive");
    if (!(rho >= 0.0) || !std::isfinite(rho))
        throw InputError("rho must be non-negative");
    if (mu && !(*mu > 0.0))
        throw InputError("explicit step size must be positive");
    if (max_iters < 0)
        throw InputError("iteration budget must be non-negative");
    if (!(tol > 0.0))
        throw InputError("stopping tolerance must be positive");
    if (!(safety > 0.0 && safety <= 1.0))
        throw InputError("step safety factor must lie in (0, 1]");
    if (uses_mask(variant) && !regularizer.mask)
        throw InputError("variant " + to_string(variant) + " needs an oracle mask");
    effective_regularizer().validate(n);
}

nlohmann::json SolverConfig::to_json() const
{
    nlohmann::json j = {
        {"variant", to_string(variant)},
        {"lambda", lambda},
        {"rho", rho},
        {"mu", mu ? nlohmann::json(*mu) : nlohmann::json("auto")},
        {"max_iters", max_iters},
        {"tol", tol},
        {"safety", safety},
        {"power_iterations", power_iterations},
        {"box", {regularizer.box.lower, regularizer.box.upper}},
        {"tv_method", to_string(regularizer.tv_method)},
        {"tv_max_sweeps", regularizer.max_sweeps},
        {"tv_tol", regularizer.tol},
        {"tv_relative", regularizer.tv_relative},
    };
    const Vector& s0 = regularizer.sigma0;
    if (s0.size() > 0 && s0.minCoeff() == s0.maxCoeff())
        j["sigma0"] = s0[0];
    else
        j["sigma0"] = s0.size() > 0 ? nlohmann::json("per-vertex") : nlohmann::json(nullptr);
    if (regularizer.mask && uses_mask(variant))
        j["mask"] = {{"active", regularizer.mask->count()}, {"size", regularizer.mask->size()},
            {"provenance", to_string(regularizer.mask->provenance)}};
    else
        j["mask"] = nullptr;
    return j;
}

nlohmann::json SolveReport::to_json() const
{
    nlohmann::json j = {
        {"variant", to_string(variant)},
        {"lambda", lambda},
        {"rho", rho},
        {"mu", mu},
        {"beta_hat", beta_hat},
        {"iterations", iterations},
        {"rejected_steps", rejected_steps},
        {"termination", termination},
        {"objective", objective},
        {"change", change},
        {"misfit", misfit},
        {"sigma", std::vector<double>(sigma.data(), sigma.data() + sigma.size())},
    };
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    j["alpha_hat"] = opt(alpha_hat);
    j["gamma_hat"] = opt(gamma_hat);
    j["q"] = opt(q);
    return j;
}

Vector grad_f(const ForwardMap& map, const ForwardMap::Evaluation& eval, const Vector& data, double lambda,
    double rho)
{
    if (data.size() != map.measurement_count())
        throw InputError("data length does not match the protocol");
    return map.adjoint(eval, eval.values - data) + (lambda * rho) * eval.sigma;
}

Vector grad_f(const ForwardMap& map, const ConductivityField& sigma, const Vector& data, double lambda, double rho)
{
    return grad_f(map, map.evaluate(sigma), data, lambda, rho);
}

double choose_step_size(double beta_hat, double lambda, double rho, double safety)
{
    if (!(beta_hat > 0.0))
        throw InputError("beta estimate must be positive");
    double mu = 1.0 / (2.0 * beta_hat);
    const double lr = lambda * rho;
    if (lr > 0.0)
        mu = std::min(mu, 1.0 / (2.0 * lr));
    return safety * mu;
}

namespace {

double smooth_part(const Vector& values, const Vector& sigma, const Vector& data, double lambda, double rho)
{
    return 0.5 * (values - data).squaredNorm() + 0.5 * lambda * rho * sigma.squaredNorm();
}

} // namespace

double objective(const ForwardMap& map, const VertexAdjacency& adj, const Vector& sigma, const Vector& data,
    const SolverConfig& config)
{
    const auto reg = config.effective_regularizer();
    if (!in_feasible_set(sigma, reg))
        return kInfinity;
    const Vector values = map.apply({sigma, reg.box, {}});
    return smooth_part(values, sigma, data, config.lambda, config.rho)
        + config.lambda * regularizer_value(sigma, reg, adj);
}

SolveReport run_pgm(const ForwardMap& map, const VertexAdjacency& adj, const Vector& init, const Vector& data,
    const SolverConfig& config, const IterateObserver& observer)
{
    const Eigen::Index n = map.parameter_count();
    if (init.size() != n)
        throw InputError("initial conductivity has the wrong length");
    if (data.size() != map.measurement_count())
        throw InputError("data length does not match the protocol");
    if (adj.vertex_count() != n)
        throw InputError("adjacency does not match the mesh");
    config.validate(n);
    const auto reg = config.effective_regularizer();
    const double lambda = config.lambda;
    const double rho = config.rho;

    Vector sigma = project_box(init, reg.box);
    if (reg.mask)
        sigma = project_oracle(sigma, *reg.mask, reg.sigma0);

    auto evaluate = [&](const Vector& s) { return map.evaluate({s, reg.box, {}}); };
    auto total = [&](const ForwardMap::Evaluation& e) {
        return smooth_part(e.values, e.sigma, data, lambda, rho) + lambda * regularizer_value(e.sigma, reg, adj);
    };

    SolveReport report;
    report.variant = config.variant;
    report.lambda = lambda;
    report.rho = rho;
    report.alpha_hat = config.alpha_hat;
    report.gamma_hat = config.gamma_hat;

    auto eval = evaluate(sigma);
    double current = total(eval);
    if (!std::isfinite(current))
        throw NumericalError("objective is not finite at the initial point");
    report.objective.push_back(current);
    report.change.push_back(0.0);
    report.misfit.push_back((eval.values - data).norm());
    if (observer)
        observer(0, sigma);

    // Masked iterates never leave sigma0 + span(I_O), so only the active
    // columns of J enter the Lipschitz bound of grad f along the path.
    std::vector<int> active;
    if (reg.mask)
        active = reg.mask->active_indices();
    auto spectral_step = [&](const ForwardMap::Evaluation& e) {
        Matrix jac = map.jacobian(e).entries;
        if (reg.mask)
            jac = jac(Eigen::all, active).eval();
        const double beta = jac.cols() > 0 ? power_iteration_sq_norm(jac, config.power_iterations) : 0.0;
        report.beta_hat = std::max(report.beta_hat, beta);
        return beta > 0.0 ? choose_step_size(beta, lambda, rho, config.safety) : kInfinity;
    };
    if (reg.mask && active.empty()) {
        // The feasible set is the single point sigma0.
        report.sigma = sigma;
        report.termination = "converged";
        return report;
    }
    double mu = config.mu ? *config.mu : spectral_step(eval);
    if (!std::isfinite(mu))
        throw NumericalError("Jacobian vanishes at the initial point; no step size can be chosen");
    const double mu_floor = 1e-14 * mu;

    report.termination = "max-iterations";
    int consecutive_failures = 0;
    while (report.iterations < config.max_iters) {
        const Vector grad = grad_f(map, eval, data, lambda, rho);
        const Vector trial = prox_g(sigma - mu * grad, mu * lambda, reg, adj, sigma);
        auto trial_eval = evaluate(trial);
        const double value = total(trial_eval);
        if (!std::isfinite(value))
            throw NumericalError("objective became non-finite during the iteration");
        if (value > current + 1e-12 * std::max(1.0, std::abs(current))) {
            ++report.rejected_steps;
            ++consecutive_failures;
            double next = 0.5 * mu;
            if (!config.mu && consecutive_failures >= 2)
                next = std::min(next, spectral_step(eval));
            mu = next;
            if (mu < mu_floor) {
                report.termination = "step-underflow";
                break;
            }
            continue;
        }
        consecutive_failures = 0;
        const double change = (trial - sigma).norm() / std::max(1.0, sigma.norm());
        sigma = trial;
        eval = std::move(trial_eval);
        current = value;
        ++report.iterations;
        report.objective.push_back(current);
        report.change.push_back(change);
        report.misfit.push_back((eval.values - data).norm());
        if (observer)
            observer(report.iterations, sigma);
        if (change < config.tol) {
            report.termination = "converged";
            break;
        }
    }
    report.sigma = sigma;
    report.mu = mu;
    if (config.alpha_hat && config.gamma_hat)
        report.q = contraction_estimate(mu, lambda, rho, *config.alpha_hat, *config.gamma_hat);
    return report;
}

double estimate_gamma(const ForwardMap& map, const std::vector<std::pair<ConductivityField, ConductivityField>>& pairs)
{
    double gamma = 0.0;
    for (const auto& [a, b] : pairs) {
        const Vector d = a.values - b.values;
        const double dd = d.squaredNorm();
        if (dd == 0.0)
            continue;
        const auto eb = map.evaluate(b);
        const Vector lin = eb.values + map.jacobian(eb).entries * d;
        gamma = std::max(gamma, (map.apply(a) - lin).squaredNorm() / dd);
    }
    return gamma;
}

double contraction_estimate(double mu, double lambda, double rho, double alpha, double gamma)
{
    return 1.0 - mu * lambda * rho - mu * alpha + 2.0 * mu * gamma;
}

std::optional<double> cluster_point_bound(double alpha, double lambda, double rho, double gamma, double value)
{
    const double denom = alpha + lambda * rho - 2.0 * gamma;
    if (!(denom > 0.0))
        return std::nullopt;
    return 4.0 / denom * value;
}

} // namespace eitcs
