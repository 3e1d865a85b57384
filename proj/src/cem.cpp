#include "eitcs/cem.hpp"

#include <cmath>
#include <map>

#include <Eigen/SVD>

#include "eitcs/parallel.hpp"
#include "eitcs/rng.hpp"

namespace eitcs {

namespace {

struct RuleEntry {
    double weight; // sums to 1 over the rule
    std::array<double, 3> lambda;
};

std::vector<RuleEntry> centroid_rule()
{
    return {{1.0, {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}}};
}

// Symmetric 6-point rule, exact for polynomials of degree 4.
std::vector<RuleEntry> degree4_rule()
{
    const double wa = 0.223381589678011;
    const double a1 = 0.108103018168070;
    const double a2 = 0.445948490915965;
    const double wb = 0.109951743655322;
    const double b1 = 0.816847572980459;
    const double b2 = 0.091576213509771;
    return {
        {wa, {a1, a2, a2}},
        {wa, {a2, a1, a2}},
        {wa, {a2, a2, a1}},
        {wb, {b1, b2, b2}},
        {wb, {b2, b1, b2}},
        {wb, {b2, b2, b1}},
    };
}

} // namespace

CemModel::CemModel(Mesh mesh, CemOptions options)
    : mesh_(std::move(mesh))
    , options_(options)
{
    validate(mesh_);
    if (options_.order != 1 && options_.order != 2)
        throw InputError("finite element order must be 1 or 2");
    if (!(options_.contact_impedance > 0.0) || !std::isfinite(options_.contact_impedance))
        throw InputError("contact impedance must be positive and finite");
    if (mesh_.electrode_count() < 2)
        throw InputError("the electrode model needs at least two electrodes");
    digest_ = eitcs::mesh_digest(mesh_);

    const int n = mesh_.vertex_count();
    const int nt = mesh_.triangle_count();
    const bool quadratic = options_.order == 2;
    local_dofs_ = quadratic ? 6 : 3;

    // Edge dofs follow the vertices, in sorted unique-edge order.
    std::map<std::pair<int, int>, int> edge_dof;
    if (quadratic) {
        int next = n;
        for (const auto& e : unique_edges(mesh_))
            edge_dof[{e[0], e[1]}] = next++;
        dofs_ = next;
    } else {
        dofs_ = n;
    }
    auto midpoint_dof = [&](int a, int b) { return edge_dof.at({std::min(a, b), std::max(a, b)}); };

    const auto rule = quadratic ? degree4_rule() : centroid_rule();
    points_per_element_ = static_cast<int>(rule.size());
    element_dofs_.resize(static_cast<std::size_t>(nt) * local_dofs_);
    points_.resize(static_cast<std::size_t>(nt) * points_per_element_);
    basis_gradients_.resize(static_cast<std::size_t>(nt) * points_per_element_ * local_dofs_ * 2);

    for (int t = 0; t < nt; ++t) {
        const auto& tri = mesh_.triangles[t];
        const Point& x0 = mesh_.vertices[tri[0]];
        const Point& x1 = mesh_.vertices[tri[1]];
        const Point& x2 = mesh_.vertices[tri[2]];
        const double det = (x1 - x0).x() * (x2 - x0).y() - (x1 - x0).y() * (x2 - x0).x();
        const double area = 0.5 * std::abs(det);
        const std::array<Point, 3> dl = {
            Point(x1.y() - x2.y(), x2.x() - x1.x()) / det,
            Point(x2.y() - x0.y(), x0.x() - x2.x()) / det,
            Point(x0.y() - x1.y(), x1.x() - x0.x()) / det,
        };

        int* dofs = &element_dofs_[static_cast<std::size_t>(t) * local_dofs_];
        for (int k = 0; k < 3; ++k)
            dofs[k] = tri[k];
        if (quadratic) {
            dofs[3] = midpoint_dof(tri[0], tri[1]);
            dofs[4] = midpoint_dof(tri[1], tri[2]);
            dofs[5] = midpoint_dof(tri[2], tri[0]);
        }

        for (int q = 0; q < points_per_element_; ++q) {
            const auto& lam = rule[q].lambda;
            const std::size_t pq = static_cast<std::size_t>(t) * points_per_element_ + q;
            points_[pq] = {rule[q].weight * area, lam};
            double* g = &basis_gradients_[pq * local_dofs_ * 2];
            std::array<Point, 6> grads;
            if (quadratic) {
                for (int k = 0; k < 3; ++k)
                    grads[k] = (4.0 * lam[k] - 1.0) * dl[k];
                const int pairs[3][2] = {{0, 1}, {1, 2}, {2, 0}};
                for (int e = 0; e < 3; ++e) {
                    const int a = pairs[e][0];
                    const int b = pairs[e][1];
                    grads[3 + e] = 4.0 * (lam[a] * dl[b] + lam[b] * dl[a]);
                }
            } else {
                for (int k = 0; k < 3; ++k)
                    grads[k] = dl[k];
            }
            for (int k = 0; k < local_dofs_; ++k) {
                g[2 * k] = grads[k].x();
                g[2 * k + 1] = grads[k].y();
            }
        }
    }

    // Electrode terms in reduced coordinates.
    const int p = mesh_.electrode_count();
    const int last = p - 1;
    const double inv_z = 1.0 / options_.contact_impedance;
    electrode_lengths_.resize(p);
    electrode_loads_.assign(p, {});
    for (int l = 0; l < p; ++l) {
        electrode_lengths_[l] = mesh_.electrode_length(l);
        std::map<int, double> loads;
        for (int ei : mesh_.electrodes[l]) {
            const Edge& e = mesh_.boundary_edges[ei];
            const double len = mesh_.edge_length(e);
            if (quadratic) {
                const int d[3] = {e[0], e[1], midpoint_dof(e[0], e[1])};
                const double mass[3][3] = {{4, -1, 2}, {-1, 4, 2}, {2, 2, 16}};
                for (int a = 0; a < 3; ++a)
                    for (int b = 0; b < 3; ++b)
                        boundary_terms_.emplace_back(d[a], d[b], inv_z * len / 30.0 * mass[a][b]);
                loads[d[0]] += len / 6.0;
                loads[d[1]] += len / 6.0;
                loads[d[2]] += 2.0 * len / 3.0;
            } else {
                const int d[2] = {e[0], e[1]};
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        boundary_terms_.emplace_back(d[a], d[b], inv_z * len / 6.0 * (a == b ? 2.0 : 1.0));
                loads[d[0]] += len / 2.0;
                loads[d[1]] += len / 2.0;
            }
        }
        electrode_loads_[l].assign(loads.begin(), loads.end());
    }

    // beta_j: coefficient of U~_j in U_last.
    std::vector<double> beta(last);
    for (int j = 0; j < last; ++j)
        beta[j] = -electrode_lengths_[j] / electrode_lengths_[last];

    auto add_sym = [&](int r, int c, double v) {
        boundary_terms_.emplace_back(r, c, v);
        boundary_terms_.emplace_back(c, r, v);
    };
    for (int j = 0; j < last; ++j)
        for (const auto& [k, load] : electrode_loads_[j])
            add_sym(k, dofs_ + j, -inv_z * load);
    for (const auto& [k, load] : electrode_loads_[last])
        for (int j = 0; j < last; ++j)
            add_sym(k, dofs_ + j, -inv_z * load * beta[j]);
    for (int j = 0; j < last; ++j) {
        for (int k = 0; k < last; ++k) {
            double v = beta[j] * beta[k] * inv_z * electrode_lengths_[last];
            if (j == k)
                v += inv_z * electrode_lengths_[j];
            boundary_terms_.emplace_back(dofs_ + j, dofs_ + k, v);
        }
    }
}

CemModel::System CemModel::factorize(const ConductivityField& sigma) const
{
    const int n = vertex_count();
    if (sigma.size() != n)
        throw InputError("conductivity length " + std::to_string(sigma.size()) + " does not match "
            + std::to_string(n) + " vertices");
    if (!sigma.values.allFinite())
        throw NumericalError("conductivity contains non-finite values");
    if (sigma.values.minCoeff() <= 0.0)
        throw NumericalError("singular system: conductivity must be strictly positive");
    if (!sigma.bounds.contains(sigma.values))
        throw InputError("conductivity lies outside its admissible box");

    std::vector<Eigen::Triplet<double>> trip = boundary_terms_;
    trip.reserve(trip.size() + points_.size() * local_dofs_ * local_dofs_);
    const int nt = mesh_.triangle_count();
    std::vector<double> local(static_cast<std::size_t>(local_dofs_) * local_dofs_);
    for (int t = 0; t < nt; ++t) {
        std::fill(local.begin(), local.end(), 0.0);
        const auto& tri = mesh_.triangles[t];
        for (int q = 0; q < points_per_element_; ++q) {
            const std::size_t pq = static_cast<std::size_t>(t) * points_per_element_ + q;
            const auto& pt = points_[pq];
            const double s = pt.hat[0] * sigma.values[tri[0]] + pt.hat[1] * sigma.values[tri[1]]
                + pt.hat[2] * sigma.values[tri[2]];
            const double* g = &basis_gradients_[pq * local_dofs_ * 2];
            for (int a = 0; a < local_dofs_; ++a)
                for (int b = 0; b < local_dofs_; ++b)
                    local[a * local_dofs_ + b] += pt.weight * s * (g[2 * a] * g[2 * b] + g[2 * a + 1] * g[2 * b + 1]);
        }
        const int* dofs = &element_dofs_[static_cast<std::size_t>(t) * local_dofs_];
        for (int a = 0; a < local_dofs_; ++a)
            for (int b = 0; b < local_dofs_; ++b)
                trip.emplace_back(dofs[a], dofs[b], local[a * local_dofs_ + b]);
    }

    System sys;
    sys.sigma = sigma.values;
    sys.matrix.resize(system_size(), system_size());
    sys.matrix.setFromTriplets(trip.begin(), trip.end());
    sys.factor = std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>();
    sys.factor->compute(sys.matrix);
    if (sys.factor->info() != Eigen::Success)
        throw NumericalError("factorization of the electrode model system failed");
    if (sys.factor->vectorD().minCoeff() <= 0.0)
        throw NumericalError("electrode model system is not positive definite");
    return sys;
}

namespace {

Vector reduced_rhs(const Vector& currents, const std::vector<double>& lengths, int dofs)
{
    const int p = static_cast<int>(lengths.size());
    const int last = p - 1;
    Vector b = Vector::Zero(dofs + last);
    for (int j = 0; j < last; ++j)
        b[dofs + j] = currents[j] - lengths[j] / lengths[last] * currents[last];
    return b;
}

} // namespace

ForwardSolution CemModel::solve(const System& system, const Vector& currents) const
{
    const int p = electrode_count();
    if (currents.size() != p)
        throw InputError("current vector must have one entry per electrode");
    if (!currents.allFinite())
        throw InputError("current vector contains non-finite values");
    if (std::abs(currents.sum()) > 1e-12 * std::max(1.0, currents.norm()))
        throw InputError("injected currents must sum to zero");
    if (!system.factor)
        throw InputError("system has not been factorized");

    const Vector x = system.factor->solve(reduced_rhs(currents, electrode_lengths_, dofs_));
    if (!x.allFinite())
        throw NumericalError("electrode model solve produced non-finite values");
    ForwardSolution sol;
    sol.potential = x.head(dofs_);
    sol.electrode_voltages.resize(p);
    double last_value = 0.0;
    for (int j = 0; j < p - 1; ++j) {
        sol.electrode_voltages[j] = x[dofs_ + j];
        last_value -= electrode_lengths_[j] / electrode_lengths_[p - 1] * x[dofs_ + j];
    }
    sol.electrode_voltages[p - 1] = last_value;
    return sol;
}

Vector CemModel::electrode_currents(const ForwardSolution& solution) const
{
    const int p = electrode_count();
    Vector out(p);
    for (int l = 0; l < p; ++l) {
        double integral = 0.0;
        for (const auto& [k, load] : electrode_loads_[l])
            integral += load * solution.potential[k];
        out[l] = (solution.electrode_voltages[l] * electrode_lengths_[l] - integral) / options_.contact_impedance;
    }
    return out;
}

double CemModel::relative_residual(const System& system, const ForwardSolution& solution, const Vector& currents) const
{
    const int p = electrode_count();
    Vector x(system_size());
    x.head(dofs_) = solution.potential;
    x.tail(p - 1) = solution.electrode_voltages.head(p - 1);
    const Vector b = reduced_rhs(currents, electrode_lengths_, dofs_);
    const double nb = b.norm();
    const double r = (system.matrix * x - b).norm();
    return nb > 0.0 ? r / nb : r;
}

std::vector<double> CemModel::quadrature_gradients(const Vector& potential) const
{
    if (potential.size() != dofs_)
        throw InputError("potential length does not match the finite element space");
    std::vector<double> out(points_.size() * 2, 0.0);
    const int nt = mesh_.triangle_count();
    for (int t = 0; t < nt; ++t) {
        const int* dofs = &element_dofs_[static_cast<std::size_t>(t) * local_dofs_];
        for (int q = 0; q < points_per_element_; ++q) {
            const std::size_t pq = static_cast<std::size_t>(t) * points_per_element_ + q;
            const double* g = &basis_gradients_[pq * local_dofs_ * 2];
            double gx = 0.0;
            double gy = 0.0;
            for (int a = 0; a < local_dofs_; ++a) {
                gx += potential[dofs[a]] * g[2 * a];
                gy += potential[dofs[a]] * g[2 * a + 1];
            }
            out[2 * pq] = gx;
            out[2 * pq + 1] = gy;
        }
    }
    return out;
}

void CemModel::add_sensitivity(const std::vector<double>& grad_a, const std::vector<double>& grad_b, double weight,
    Vector& out) const
{
    if (grad_a.size() != points_.size() * 2 || grad_b.size() != points_.size() * 2)
        throw InputError("gradient arrays do not match the quadrature layout");
    if (out.size() != vertex_count())
        throw InputError("sensitivity output has the wrong length");
    const int nt = mesh_.triangle_count();
    for (int t = 0; t < nt; ++t) {
        const auto& tri = mesh_.triangles[t];
        for (int q = 0; q < points_per_element_; ++q) {
            const std::size_t pq = static_cast<std::size_t>(t) * points_per_element_ + q;
            const auto& pt = points_[pq];
            const double dot = grad_a[2 * pq] * grad_b[2 * pq] + grad_a[2 * pq + 1] * grad_b[2 * pq + 1];
            const double c = -weight * pt.weight * dot;
            out[tri[0]] += c * pt.hat[0];
            out[tri[1]] += c * pt.hat[1];
            out[tri[2]] += c * pt.hat[2];
        }
    }
}

Vector CemModel::sensitivity(const Vector& potential_a, const Vector& potential_b) const
{
    Vector out = Vector::Zero(vertex_count());
    add_sensitivity(quadrature_gradients(potential_a), quadrature_gradients(potential_b), 1.0, out);
    return out;
}

ForwardSolution assemble_and_solve(const CemModel& model, const ConductivityField& sigma, const Vector& currents)
{
    return model.solve(model.factorize(sigma), currents);
}

ForwardMap::ForwardMap(std::shared_ptr<const CemModel> model, Protocol protocol)
    : model_(std::move(model))
    , protocol_(std::move(protocol))
{
    if (!model_)
        throw InputError("forward map needs a model");
    protocol_.validate();
    if (protocol_.electrodes != model_->electrode_count())
        throw InputError("protocol electrode count does not match the mesh");
    if (protocol_.size() == 0)
        throw InputError("protocol has no readings");

    std::map<ElectrodePair, int> index;
    auto ref = [&](const ElectrodePair& pr) {
        const ElectrodePair key{std::min(pr.first, pr.second), std::max(pr.first, pr.second)};
        auto [it, inserted] = index.emplace(key, static_cast<int>(patterns_.size()));
        if (inserted)
            patterns_.push_back(key);
        return PatternRef{it->second, pr.first < pr.second ? 1.0 : -1.0};
    };
    for (const auto& pr : protocol_.injections)
        injection_refs_.push_back(ref(pr));
    for (const auto& pr : protocol_.measurements)
        measurement_refs_.push_back(ref(pr));
}

ForwardMap::Evaluation ForwardMap::evaluate(const ConductivityField& sigma) const
{
    const auto system = model_->factorize(sigma);
    const int p = model_->electrode_count();
    Evaluation eval;
    eval.sigma = sigma.values;
    eval.patterns.resize(patterns_.size());
    parallel_for(static_cast<int>(patterns_.size()), [&](int k) {
        Vector current = Vector::Zero(p);
        current[patterns_[k].first] = 1.0;
        current[patterns_[k].second] = -1.0;
        eval.patterns[k] = model_->solve(system, current);
    });
    eval.values.resize(protocol_.size());
    for (int r = 0; r < protocol_.size(); ++r) {
        const auto& rd = protocol_.readings[r];
        const auto& inj = injection_refs_[rd.injection];
        const auto& meas = protocol_.measurements[rd.measurement];
        const Vector& U = eval.patterns[inj.pattern].electrode_voltages;
        eval.values[r] = inj.sign * (U[meas.first] - U[meas.second]);
    }
    return eval;
}

JacobianMatrix ForwardMap::jacobian(const Evaluation& eval) const
{
    if (eval.patterns.size() != patterns_.size())
        throw InputError("evaluation does not belong to this forward map");
    std::vector<std::vector<double>> grads(patterns_.size());
    parallel_for(static_cast<int>(patterns_.size()),
        [&](int k) { grads[k] = model_->quadrature_gradients(eval.patterns[k].potential); });

    JacobianMatrix jac;
    jac.protocol = protocol_;
    jac.sigma = eval.sigma;
    const int m = protocol_.size();
    const int n = model_->vertex_count();
    jac.entries.resize(m, n);
    parallel_for(m, [&](int r) {
        const auto& rd = protocol_.readings[r];
        const auto& inj = injection_refs_[rd.injection];
        const auto& meas = measurement_refs_[rd.measurement];
        Vector row = Vector::Zero(n);
        model_->add_sensitivity(grads[inj.pattern], grads[meas.pattern], inj.sign * meas.sign, row);
        jac.entries.row(r) = row.transpose();
    });
    return jac;
}

Vector ForwardMap::adjoint(const Evaluation& eval, const Vector& y) const
{
    if (y.size() != protocol_.size())
        throw InputError("adjoint input length does not match the protocol");
    if (eval.patterns.size() != patterns_.size())
        throw InputError("evaluation does not belong to this forward map");
    const int n = model_->vertex_count();
    const int na = static_cast<int>(protocol_.injections.size());

    // Per drive, combine the weighted measurement potentials into one field.
    std::vector<Vector> combined(na, Vector::Zero(model_->dof_count()));
    std::vector<char> used(na, 0);
    for (int r = 0; r < protocol_.size(); ++r) {
        const auto& rd = protocol_.readings[r];
        const auto& meas = measurement_refs_[rd.measurement];
        combined[rd.injection] += (y[r] * meas.sign) * eval.patterns[meas.pattern].potential;
        used[rd.injection] = 1;
    }
    std::vector<Vector> parts(na);
    parallel_for(na, [&](int a) {
        parts[a] = Vector::Zero(n);
        if (!used[a])
            return;
        const auto& inj = injection_refs_[a];
        model_->add_sensitivity(model_->quadrature_gradients(eval.patterns[inj.pattern].potential),
            model_->quadrature_gradients(combined[a]), inj.sign, parts[a]);
    });
    Vector out = Vector::Zero(n);
    for (const auto& part : parts)
        out += part;
    return out;
}

Matrix ForwardMap::transfer_matrix(const Vector& values) const
{
    if (values.size() != protocol_.size())
        throw InputError("value vector length does not match the protocol");
    Matrix t = Matrix::Constant(static_cast<Eigen::Index>(protocol_.injections.size()),
        static_cast<Eigen::Index>(protocol_.measurements.size()), std::numeric_limits<double>::quiet_NaN());
    for (int r = 0; r < protocol_.size(); ++r)
        t(protocol_.readings[r].injection, protocol_.readings[r].measurement) = values[r];
    return t;
}

Vector apply_phi(const ForwardMap& map, const ConductivityField& sigma)
{
    return map.apply(sigma);
}

RipEstimate merge(const RipEstimate& a, const RipEstimate& b)
{
    if (a.samples == 0)
        return b;
    if (b.samples == 0)
        return a;
    RipEstimate out;
    out.alpha = std::min(a.alpha, b.alpha);
    out.beta = std::max(a.beta, b.beta);
    out.samples = a.samples + b.samples;
    out.degenerate = a.degenerate || b.degenerate;
    return out;
}

RipEstimate estimate_rip_bounds(const ForwardMap& map, const std::vector<ConductivityField>& samples,
    const std::vector<int>& columns)
{
    const int n = map.parameter_count();
    for (int c : columns)
        if (c < 0 || c >= n)
            throw InputError("column index out of range");
    RipEstimate est;
    for (const auto& sigma : samples) {
        const Matrix full = map.jacobian(sigma).entries;
        Matrix sub;
        if (columns.empty()) {
            sub = full;
        } else {
            sub.resize(full.rows(), static_cast<Eigen::Index>(columns.size()));
            for (std::size_t k = 0; k < columns.size(); ++k)
                sub.col(static_cast<Eigen::Index>(k)) = full.col(columns[k]);
        }
        Eigen::BDCSVD<Matrix> svd(sub);
        const Vector& s = svd.singularValues();
        RipEstimate one;
        one.samples = 1;
        one.beta = s.size() > 0 ? s[0] * s[0] : 0.0;
        one.alpha = (sub.rows() >= sub.cols() && s.size() > 0) ? s[s.size() - 1] * s[s.size() - 1] : 0.0;
        one.degenerate = one.alpha <= 1e-12 * one.beta;
        est = merge(est, one);
    }
    return est;
}

double power_iteration_sq_norm(const Matrix& jacobian, int iterations)
{
    if (jacobian.size() == 0)
        return 0.0;
    Rng rng(0x5eedULL);
    Vector v(jacobian.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i)
        v[i] = rng.normal();
    v.normalize();
    double value = 0.0;
    for (int it = 0; it < iterations; ++it) {
        const Vector w = jacobian.transpose() * (jacobian * v);
        const double nw = w.norm();
        if (nw == 0.0)
            return 0.0;
        value = v.dot(w);
        v = w / nw;
    }
    return std::max(value, (jacobian * v).squaredNorm());
}

} // namespace eitcs
