#include "eitcs/prox.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace eitcs {

void RegularizerConfig::validate(Eigen::Index n) const
{
    box.validate();
    if (sigma0.size() != n)
        throw InputError("reference conductivity has the wrong length");
    if (!box.contains(sigma0))
        throw InputError("reference conductivity must lie inside the box");
    if (mask && mask->size() != n)
        throw InputError("oracle mask has the wrong length");
    if (max_sweeps < 1)
        throw InputError("TV sweep budget must be positive");
    if (!(tol > 0.0))
        throw InputError("TV tolerance must be positive");
}

Vector soft_threshold(const Vector& v, double t, const Vector& sigma0)
{
    if (!(t >= 0.0))
        throw InputError("threshold must be non-negative");
    if (v.size() != sigma0.size())
        throw InputError("soft_threshold: length mismatch");
    Vector out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        // Shrinking v towards sigma0 (rather than rebuilding from sigma0)
        // keeps t = 0 an exact identity.
        const double d = v[i] - sigma0[i];
        out[i] = std::abs(d) <= t ? sigma0[i] : (d > 0.0 ? v[i] - t : v[i] + t);
    }
    return out;
}

double prox_tv_local(double data, std::span<const double> neighbor_values, std::span<const double> weights,
    double tau)
{
    const std::size_t deg = neighbor_values.size();
    if (weights.size() != deg)
        throw InputError("prox_tv_local: weights and neighbors differ in length");
    if (!(tau >= 0.0))
        throw InputError("prox_tv_local: tau must be non-negative");
    if (deg == 0)
        return data;
    double total = 0.0;
    for (std::size_t k = 0; k < deg; ++k) {
        if (!(weights[k] > 0.0))
            throw InputError("prox_tv_local: weights must be positive");
        if (k > 0 && neighbor_values[k] < neighbor_values[k - 1])
            throw InputError("prox_tv_local: neighbor values must be sorted");
        total += weights[k];
    }
    // Candidates: the neighbors, and data + tau * W_j with
    // W_j = -sum_{k<=j} w_k + sum_{k>j} w_k for j = 0..deg.
    std::vector<double> cand(2 * deg + 1);
    std::copy(neighbor_values.begin(), neighbor_values.end(), cand.begin());
    double below = 0.0;
    for (std::size_t j = 0; j <= deg; ++j) {
        if (j > 0)
            below += weights[j - 1];
        cand[deg + j] = data + tau * (total - 2.0 * below);
    }
    auto mid = cand.begin() + static_cast<std::ptrdiff_t>(deg);
    std::nth_element(cand.begin(), mid, cand.end());
    return *mid;
}

double tv_value(const Vector& x, const VertexAdjacency& adj)
{
    if (x.size() != adj.vertex_count())
        throw InputError("tv_value: length mismatch");
    double sum = 0.0;
    for (int i = 0; i < adj.vertex_count(); ++i)
        for (int j = 0; j < adj.degree(i); ++j) {
            const int k = adj.neighbors[i][j];
            if (k > i)
                sum += adj.weights[i][j] * std::abs(x[i] - x[k]);
        }
    return sum;
}

namespace {

// Scratch buffers for one local solve with co-sorted neighbor data.
struct LocalProblem {
    std::vector<std::pair<double, double>> entries; // (value, weight)
    std::vector<double> values;
    std::vector<double> weights;

    void clear() { entries.clear(); }
    void add(double value, double weight) { entries.emplace_back(value, weight); }

    double solve(double data, double tau)
    {
        std::sort(entries.begin(), entries.end());
        values.resize(entries.size());
        weights.resize(entries.size());
        for (std::size_t k = 0; k < entries.size(); ++k) {
            values[k] = entries[k].first;
            weights[k] = entries[k].second;
        }
        return prox_tv_local(data, values, weights, tau);
    }
};

Vector prox_tv_sweeps(const Vector& sigma, double tau, const VertexAdjacency& adj, const TvSolveOptions& options,
    const Vector& lower, const Vector& upper, TvSolveInfo* info)
{
    const int n = adj.vertex_count();
    Vector x = options.warm_start.size() == n ? options.warm_start : sigma;
    x = x.cwiseMax(lower).cwiseMin(upper);

    std::vector<char> pinned(n, 0);
    for (int i = 0; i < n; ++i)
        pinned[i] = lower[i] == upper[i];

    LocalProblem local;
    std::vector<int> label(n);
    std::vector<int> stack;
    std::vector<int> members;
    int sweep = 0;
    double change = 0.0;
    for (sweep = 1; sweep <= options.max_sweeps; ++sweep) {
        change = 0.0;
        for (int i = 0; i < n; ++i) {
            if (pinned[i])
                continue;
            local.clear();
            for (int j = 0; j < adj.degree(i); ++j)
                local.add(x[adj.neighbors[i][j]], adj.weights[i][j]);
            const double xi = std::clamp(local.solve(sigma[i], tau), lower[i], upper[i]);
            change = std::max(change, std::abs(xi - x[i]));
            x[i] = xi;
        }

        // Equal-valued connected clusters move as one coordinate:
        // 1/2 |C| (c - mean_C sigma)^2 + tau * sum over cut edges w |c - x_k|.
        std::fill(label.begin(), label.end(), -1);
        int clusters = 0;
        for (int seed = 0; seed < n; ++seed) {
            if (pinned[seed] || label[seed] >= 0)
                continue;
            members.clear();
            stack.assign(1, seed);
            label[seed] = clusters;
            while (!stack.empty()) {
                const int i = stack.back();
                stack.pop_back();
                members.push_back(i);
                for (int k : adj.neighbors[i])
                    if (!pinned[k] && label[k] < 0 && x[k] == x[i]) {
                        label[k] = clusters;
                        stack.push_back(k);
                    }
            }
            ++clusters;
            if (members.size() < 2)
                continue;
            double mean = 0.0;
            double lo = -kInfinity;
            double hi = kInfinity;
            local.clear();
            for (int i : members) {
                mean += sigma[i];
                lo = std::max(lo, lower[i]);
                hi = std::min(hi, upper[i]);
                for (int j = 0; j < adj.degree(i); ++j) {
                    const int k = adj.neighbors[i][j];
                    if (label[k] != label[i] || pinned[k])
                        local.add(x[k], adj.weights[i][j]);
                }
            }
            // Neighbours labelled later may still carry label -1; they are
            // outside the cluster because the flood fill is complete.
            const double size = static_cast<double>(members.size());
            mean /= size;
            const double c = std::clamp(local.solve(mean, tau / size), lo, hi);
            const double old = x[members.front()];
            change = std::max(change, std::abs(c - old));
            for (int i : members)
                x[i] = c;
        }
        if (change < options.tol)
            break;
    }
    if (info)
        *info = {std::min(sweep, options.max_sweeps), change, 0};
    return x;
}

// Dinic maximum flow on a small graph with real capacities. Residual
// capacities at or below `eps` count as saturated.
class FlowGraph {
public:
    FlowGraph(int nodes, double eps) : arcs_(nodes), level_(nodes), next_(nodes), eps_(eps) {}

    void add(int u, int v, double cap_uv, double cap_vu)
    {
        arcs_[u].push_back({v, static_cast<int>(arcs_[v].size()), cap_uv});
        arcs_[v].push_back({u, static_cast<int>(arcs_[u].size()) - 1, cap_vu});
    }

    void max_flow(int s, int t)
    {
        while (bfs(s, t)) {
            std::fill(next_.begin(), next_.end(), 0);
            while (augment(s, t, kInfinity) > eps_) {
            }
        }
    }

    // Nodes reachable from s through unsaturated arcs.
    std::vector<char> reachable_from(int s) const
    {
        std::vector<char> seen(arcs_.size(), 0);
        std::vector<int> stack{s};
        seen[s] = 1;
        while (!stack.empty()) {
            const int u = stack.back();
            stack.pop_back();
            for (const auto& a : arcs_[u])
                if (a.cap > eps_ && !seen[a.to]) {
                    seen[a.to] = 1;
                    stack.push_back(a.to);
                }
        }
        return seen;
    }

    // Nodes from which t is reachable through unsaturated arcs.
    std::vector<char> reaching(int t) const
    {
        std::vector<char> seen(arcs_.size(), 0);
        std::vector<int> stack{t};
        seen[t] = 1;
        while (!stack.empty()) {
            const int v = stack.back();
            stack.pop_back();
            for (const auto& back : arcs_[v]) {
                const auto& a = arcs_[back.to][back.rev]; // arc back.to -> v
                if (a.cap > eps_ && !seen[back.to]) {
                    seen[back.to] = 1;
                    stack.push_back(back.to);
                }
            }
        }
        return seen;
    }

private:
    struct Arc {
        int to;
        int rev;
        double cap;
    };

    bool bfs(int s, int t)
    {
        std::fill(level_.begin(), level_.end(), -1);
        std::vector<int> queue{s};
        level_[s] = 0;
        for (std::size_t q = 0; q < queue.size(); ++q) {
            const int u = queue[q];
            for (const auto& a : arcs_[u])
                if (a.cap > eps_ && level_[a.to] < 0) {
                    level_[a.to] = level_[u] + 1;
                    queue.push_back(a.to);
                }
        }
        return level_[t] >= 0;
    }

    double augment(int u, int t, double limit)
    {
        if (u == t)
            return limit;
        for (int& k = next_[u]; k < static_cast<int>(arcs_[u].size()); ++k) {
            Arc& a = arcs_[u][k];
            if (a.cap <= eps_ || level_[a.to] != level_[u] + 1)
                continue;
            const double pushed = augment(a.to, t, std::min(limit, a.cap));
            if (pushed > eps_) {
                a.cap -= pushed;
                arcs_[a.to][a.rev].cap += pushed;
                return pushed;
            }
        }
        return 0.0;
    }

    std::vector<std::vector<Arc>> arcs_;
    std::vector<int> level_;
    std::vector<int> next_;
    double eps_;
};

Vector prox_tv_exact(const Vector& sigma, double tau, const VertexAdjacency& adj, const Vector& lower,
    const Vector& upper, TvSolveInfo* info)
{
    const int n = adj.vertex_count();
    Vector x = sigma.cwiseMax(lower).cwiseMin(upper);
    std::vector<char> pinned(n, 0);
    for (int i = 0; i < n; ++i)
        pinned[i] = lower[i] == upper[i];

    // Linear coefficient d_i of the local objective
    // 1/2 (x - sigma_i)^2 + d_i x + tau sum_{pinned k} w_ik |x - x_k|, collected
    // from neighbours already known to lie above (negative) or below (positive).
    std::vector<double> linear(n, 0.0);
    std::vector<int> group(n, -1);
    std::vector<int> local(n, -1);
    int groups = 0;
    int cuts = 0;

    // Splits a vertex list into connected components (edges between free
    // vertices of the list only) and queues them.
    std::vector<std::vector<int>> work;
    std::vector<int> stack;
    auto enqueue = [&](const std::vector<int>& verts) {
        const int tag = groups++;
        for (int i : verts)
            group[i] = tag;
        for (int root : verts) {
            if (group[root] != tag)
                continue;
            std::vector<int> comp;
            const int comp_tag = groups++;
            group[root] = comp_tag;
            stack.assign(1, root);
            while (!stack.empty()) {
                const int i = stack.back();
                stack.pop_back();
                comp.push_back(i);
                for (int k : adj.neighbors[i])
                    if (group[k] == tag) {
                        group[k] = comp_tag;
                        stack.push_back(k);
                    }
            }
            work.push_back(std::move(comp));
        }
    };

    std::vector<int> free_vertices;
    for (int i = 0; i < n; ++i)
        if (!pinned[i])
            free_vertices.push_back(i);
    enqueue(free_vertices);

    LocalProblem median;
    std::vector<double> right(n), left(n);
    while (!work.empty()) {
        std::vector<int> verts = std::move(work.back());
        work.pop_back();
        const int tag = group[verts.front()];
        const int size = static_cast<int>(verts.size());

        // Best common value of the whole component.
        double lo = -kInfinity;
        double hi = kInfinity;
        double mean = 0.0;
        median.clear();
        for (int i : verts) {
            lo = std::max(lo, lower[i]);
            hi = std::min(hi, upper[i]);
            mean += sigma[i] - linear[i];
            for (int j = 0; j < adj.degree(i); ++j)
                if (pinned[adj.neighbors[i][j]])
                    median.add(x[adj.neighbors[i][j]], adj.weights[i][j]);
        }
        mean /= size;
        double alpha;
        if (lo <= hi) {
            alpha = std::clamp(median.solve(mean, tau / size), lo, hi);
            if (size == 1) {
                x[verts.front()] = alpha;
                continue;
            }
        } else {
            // No common feasible value: any level strictly between the
            // bounds separates the component.
            alpha = 0.5 * (lo + hi);
        }

        // One-sided derivatives of every local objective at alpha.
        double scale = 0.0;
        for (int i : verts) {
            double base = alpha - sigma[i] + linear[i];
            double kink = 0.0;
            for (int j = 0; j < adj.degree(i); ++j) {
                const int k = adj.neighbors[i][j];
                if (!pinned[k])
                    continue;
                const double c = tau * adj.weights[i][j];
                if (alpha > x[k])
                    base += c;
                else if (alpha < x[k])
                    base -= c;
                else
                    kink += c;
            }
            right[i] = alpha < lower[i] ? -kInfinity : (alpha >= upper[i] ? kInfinity : base + kink);
            left[i] = alpha <= lower[i] ? -kInfinity : (alpha > upper[i] ? kInfinity : base - kink);
            scale += std::abs(base) + kink;
            for (int j = 0; j < adj.degree(i); ++j)
                if (group[adj.neighbors[i][j]] == tag)
                    scale += tau * adj.weights[i][j];
        }
        scale = std::max(scale, 1e-300);
        const double big = 1e6 * scale;
        const double eps = 1e-14 * scale;
        for (int q = 0; q < size; ++q)
            local[verts[q]] = q;

        // Minimal minimizer of sum_{i in S} g_i + tau cut(S), S on the source side.
        auto cut = [&](const std::vector<double>& g, bool minimal) {
            FlowGraph flow(size + 2, eps);
            const int s = size;
            const int t = size + 1;
            for (int q = 0; q < size; ++q) {
                const int i = verts[q];
                const double gi = std::isinf(g[i]) ? std::copysign(big, g[i]) : g[i];
                if (gi > 0.0)
                    flow.add(q, t, gi, 0.0);
                else if (gi < 0.0)
                    flow.add(s, q, -gi, 0.0);
                for (int j = 0; j < adj.degree(i); ++j) {
                    const int k = adj.neighbors[i][j];
                    if (k > i && group[k] == tag) {
                        const double c = tau * adj.weights[i][j];
                        flow.add(q, local[k], c, c);
                    }
                }
            }
            flow.max_flow(s, t);
            ++cuts;
            std::vector<char> side(size);
            if (minimal) {
                const auto r = flow.reachable_from(s);
                for (int q = 0; q < size; ++q)
                    side[q] = r[q];
            } else {
                const auto r = flow.reaching(t);
                for (int q = 0; q < size; ++q)
                    side[q] = !r[q];
            }
            return side;
        };
        const auto above = cut(right, true); // optimum > alpha
        const auto atleast = cut(left, false); // optimum >= alpha

        std::vector<int> up, at, down;
        for (int q = 0; q < size; ++q) {
            if (above[q])
                up.push_back(verts[q]);
            else if (atleast[q])
                at.push_back(verts[q]);
            else
                down.push_back(verts[q]);
        }
        if (at.empty() && (up.empty() || down.empty())) {
            // Only rounding can produce this split; the component sits at alpha.
            for (int i : verts)
                x[i] = std::clamp(alpha, lower[i], upper[i]);
            continue;
        }
        for (int i : at)
            x[i] = alpha;
        // Cut edges become linear terms: neighbours outside `up` lie below it,
        // neighbours outside `down` lie above it.
        std::vector<char> side(size, 0); // 1 up, 0 at, -1 down
        for (int i : up)
            side[local[i]] = 1;
        for (int i : down)
            side[local[i]] = -1;
        for (int i : verts) {
            const int si = side[local[i]];
            if (si == 0)
                continue;
            for (int j = 0; j < adj.degree(i); ++j) {
                const int k = adj.neighbors[i][j];
                if (group[k] != tag || side[local[k]] == si)
                    continue;
                linear[i] += si * tau * adj.weights[i][j];
            }
        }
        if (!up.empty())
            enqueue(up);
        if (!down.empty())
            enqueue(down);
    }
    if (info)
        *info = {0, 0.0, cuts};
    return x;
}

} // namespace

std::string to_string(TvMethod m)
{
    return m == TvMethod::Exact ? "exact" : "sweeps";
}

TvMethod parse_tv_method(const std::string& s)
{
    if (s == "exact")
        return TvMethod::Exact;
    if (s == "sweeps")
        return TvMethod::Sweeps;
    throw InputError("unknown TV method '" + s + "' (expected exact or sweeps)");
}

Vector prox_tv(const Vector& sigma, double tau, const VertexAdjacency& adj, const TvSolveOptions& options,
    TvSolveInfo* info)
{
    const int n = adj.vertex_count();
    if (sigma.size() != n)
        throw InputError("prox_tv: length mismatch");
    if (!(tau >= 0.0))
        throw InputError("prox_tv: tau must be non-negative");
    const bool bounded = options.lower.size() > 0 || options.upper.size() > 0;
    const Vector lower = options.lower.size() > 0 ? options.lower : Vector::Constant(n, -kInfinity);
    const Vector upper = options.upper.size() > 0 ? options.upper : Vector::Constant(n, kInfinity);
    if (lower.size() != n || upper.size() != n)
        throw InputError("prox_tv: bound vectors have the wrong length");
    for (int i = 0; i < n; ++i)
        if (!(lower[i] <= upper[i]))
            throw InputError("prox_tv: empty bound interval");
    if (tau == 0.0) {
        if (info)
            *info = {};
        return bounded ? Vector(sigma.cwiseMax(lower).cwiseMin(upper)) : sigma;
    }
    if (options.method == TvMethod::Exact)
        return prox_tv_exact(sigma, tau, adj, lower, upper, info);
    return prox_tv_sweeps(sigma, tau, adj, options, lower, upper, info);
}

Vector project_box(const Vector& sigma, const Box& box)
{
    box.validate();
    return sigma.cwiseMax(box.lower).cwiseMin(box.upper);
}

Vector project_oracle(const Vector& sigma, const OracleMask& mask, const Vector& sigma0)
{
    if (mask.size() != sigma.size() || sigma0.size() != sigma.size())
        throw InputError("project_oracle: length mismatch");
    Vector out = sigma;
    for (int i = 0; i < mask.size(); ++i)
        if (!mask.active(i))
            out[i] = sigma0[i];
    return out;
}

ConductivityField project_oracle(const ConductivityField& sigma, const OracleMask& mask, const Vector& sigma0)
{
    check_same_mesh(sigma.mesh_digest, mask.mesh_digest, "project_oracle");
    return {project_oracle(sigma.values, mask, sigma0), sigma.bounds, sigma.mesh_digest};
}

Vector prox_g(const Vector& sigma, double tau, const RegularizerConfig& config, const VertexAdjacency& adj,
    const Vector& warm_start)
{
    const Eigen::Index n = sigma.size();
    config.validate(n);
    if (!(tau >= 0.0))
        throw InputError("prox_g: tau must be non-negative");

    Vector out;
    if (config.penalty == Penalty::L1) {
        out = project_box(soft_threshold(sigma, tau, config.sigma0), config.box);
    } else {
        TvSolveOptions opt;
        opt.method = config.tv_method;
        opt.max_sweeps = config.max_sweeps;
        opt.tol = config.tol;
        opt.lower = Vector::Constant(n, config.box.lower);
        opt.upper = Vector::Constant(n, config.box.upper);
        if (config.mask)
            for (int i = 0; i < config.mask->size(); ++i)
                if (!config.mask->active(i))
                    opt.lower[i] = opt.upper[i] = config.sigma0[i];
        const Vector shift = config.tv_relative ? config.sigma0 : Vector::Zero(n);
        opt.lower -= shift;
        opt.upper -= shift;
        if (warm_start.size() == n)
            opt.warm_start = warm_start - shift;
        out = prox_tv(sigma - shift, tau, adj, opt) + shift;
        out = project_box(out, config.box);
    }
    if (config.mask)
        out = project_oracle(out, *config.mask, config.sigma0);
    return out;
}

double regularizer_value(const Vector& sigma, const RegularizerConfig& config, const VertexAdjacency& adj)
{
    if (config.penalty == Penalty::L1)
        return (sigma - config.sigma0).lpNorm<1>();
    return config.tv_relative ? tv_value(sigma - config.sigma0, adj) : tv_value(sigma, adj);
}

bool in_feasible_set(const Vector& sigma, const RegularizerConfig& config)
{
    if (!sigma.allFinite() || !config.box.contains(sigma))
        return false;
    if (config.mask)
        for (int i = 0; i < config.mask->size(); ++i)
            if (!config.mask->active(i) && sigma[i] != config.sigma0[i])
                return false;
    return true;
}

} // namespace eitcs
