#include "eitcs/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "eitcs/parallel.hpp"

namespace eitcs {

// ---------------------------------------------------------------- tables

std::string format_number(double v)
{
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

int Table::column(const std::string& name) const
{
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
        throw InputError("table has no column '" + name + "'");
    return static_cast<int>(it - header.begin());
}

const std::string& Table::cell(std::size_t row, const std::string& name) const
{
    return rows.at(row).at(static_cast<std::size_t>(column(name)));
}

double Table::number(std::size_t row, const std::string& name) const
{
    const std::string& text = cell(row, name);
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size())
            throw InputError("");
        return v;
    } catch (const std::exception&) {
        throw InputError("cell '" + text + "' in column '" + name + "' is not a number");
    }
}

void Table::add_row(std::vector<std::string> row)
{
    if (row.size() != header.size())
        throw InputError("row width does not match the table header");
    rows.push_back(std::move(row));
}

namespace {

std::string csv_escape(const std::string& s)
{
    if (s.find_first_of(",\"\n\r") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + "\"";
}

void append_line(std::string& out, const std::vector<std::string>& cells)
{
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i)
            out += ',';
        out += csv_escape(cells[i]);
    }
    out += '\n';
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text)
{
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            record.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n')
                ++i;
            if (any || !field.empty()) {
                record.push_back(std::move(field));
                records.push_back(std::move(record));
            }
            record.clear();
            field.clear();
            any = false;
        } else {
            field += c;
            any = true;
        }
    }
    if (quoted)
        throw FormatError("unterminated quoted CSV field");
    if (any || !field.empty()) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
    }
    return records;
}

std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& text, const std::filesystem::path& path)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out)
        throw std::runtime_error("write failed for " + path.string());
}

double mean_of(const std::vector<double>& v)
{
    if (v.empty())
        return std::nan("");
    double s = 0.0;
    for (double x : v)
        s += x;
    return s / static_cast<double>(v.size());
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace

std::string Table::to_csv() const
{
    std::string out;
    append_line(out, header);
    for (const auto& row : rows)
        append_line(out, row);
    return out;
}

Table Table::from_csv(const std::string& text)
{
    auto records = parse_csv(text);
    if (records.empty())
        throw FormatError("CSV has no header line");
    Table t;
    t.header = std::move(records.front());
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].size() != t.header.size())
            throw FormatError("CSV line " + std::to_string(i + 1) + " has the wrong number of cells");
        t.rows.push_back(std::move(records[i]));
    }
    return t;
}

std::filesystem::path metadata_path(const std::filesystem::path& csv_path)
{
    auto p = csv_path;
    p.replace_extension(".meta.json");
    return p;
}

void write_table(const Table& table, const std::filesystem::path& path)
{
    write_text(table.to_csv(), path);
    write_text(table.metadata.dump(1) + "\n", metadata_path(path));
}

Table read_table(const std::filesystem::path& path)
{
    Table t = Table::from_csv(read_text(path));
    const auto meta = metadata_path(path);
    if (std::filesystem::exists(meta)) {
        try {
            t.metadata = nlohmann::json::parse(read_text(meta));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("bad metadata in " + meta.string() + ": " + e.what());
        }
    }
    return t;
}

LineFit least_squares_line(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size() || x.size() < 2)
        throw InputError("a line fit needs at least two paired points");
    const double mx = mean_of(x);
    const double my = mean_of(y);
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (!(sxx > 0.0))
        throw InputError("a line fit needs at least two distinct abscissae");
    LineFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    return fit;
}

// ---------------------------------------------------------------- samples

std::vector<ExperimentSample> dataset_samples(const std::filesystem::path& dir, const LoadedDataset& dataset,
    const std::vector<int>& indices, bool noisy)
{
    std::vector<int> chosen = indices;
    if (chosen.empty())
        for (int i = 0; i < static_cast<int>(dataset.manifest.samples.size()); ++i)
            chosen.push_back(i);
    const auto adj = vertex_adjacency(dataset.mesh);
    const auto& cfg = dataset.manifest.config;
    const Vector sigma0 = Vector::Constant(dataset.mesh.vertex_count(), cfg.phantom.background);
    std::vector<ExperimentSample> out;
    for (int index : chosen) {
        if (index < 0 || index >= static_cast<int>(dataset.manifest.samples.size()))
            throw InputError("sample index " + std::to_string(index) + " is out of range");
        SampleData data = load_sample(dir, dataset, index);
        const auto& rec = dataset.manifest.samples[static_cast<std::size_t>(index)];
        ExperimentSample s;
        s.id = rec.id;
        s.reference_mask = ideal_oracle(data.truth, sigma0, default_support_tolerance(cfg.box), 0, adj);
        s.truth = std::move(data.truth);
        s.data = noisy ? std::move(data.noisy) : std::move(data.clean);
        s.mask = std::move(data.mask);
        s.seeds = {{"dataset", cfg.seed}, {"phantom", rec.phantom_seed}, {"noise", rec.noise_seed}};
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------- compare

namespace {

SolveReport solve_sample(const ForwardMap& map, const VertexAdjacency& adj, const ExperimentSample& sample,
    SolverConfig cfg)
{
    const int n = map.parameter_count();
    if (sample.truth.size() != n)
        throw InputError("sample does not live on the forward map's mesh");
    if (cfg.regularizer.sigma0.size() == 0)
        cfg.regularizer.sigma0 = Vector::Ones(n);
    if (uses_mask(cfg.variant))
        cfg.regularizer.mask = sample.mask;
    return run_pgm(map, adj, cfg.regularizer.sigma0, sample.data, cfg);
}

nlohmann::json base_metadata(const ForwardMap& map, const SolverConfig& base)
{
    return {
        {"mesh_digest", map.model().mesh_digest()},
        {"vertices", map.parameter_count()},
        {"protocol", protocol_to_json(map.protocol())},
        {"forward", {{"order", map.model().options().order},
                        {"contact_impedance", map.model().options().contact_impedance}}},
        {"solver", base.to_json()},
        {"threads", thread_count()},
    };
}

} // namespace

CompareResult compare_variants(const ForwardMap& map, const VertexAdjacency& adj,
    const std::vector<ExperimentSample>& samples, const CompareOptions& options)
{
    if (options.variants.empty())
        throw InputError("no variants requested");
    for (Variant v : options.variants)
        if (!options.lambda.count(v))
            throw InputError("no lambda given for " + to_string(v));

    const int nv = static_cast<int>(options.variants.size());
    const int cells = static_cast<int>(samples.size()) * nv;
    std::vector<SolveReport> reports(static_cast<std::size_t>(cells));
    parallel_for(cells, [&](int c) {
        const auto& sample = samples[static_cast<std::size_t>(c / nv)];
        SolverConfig cfg = options.base;
        cfg.variant = options.variants[static_cast<std::size_t>(c % nv)];
        cfg.lambda = options.lambda.at(cfg.variant);
        reports[static_cast<std::size_t>(c)] = solve_sample(map, adj, sample, cfg);
    });

    std::vector<int> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return samples[a].id < samples[b].id; });

    CompareResult result;
    Table& t = result.table;
    t.header = {"sample", "variant", "lambda", "psnr", "rel_err", "fn", "mask_size", "iterations", "termination",
        "objective", "mu"};
    std::map<Variant, std::vector<double>> psnrs, errs;
    nlohmann::json seeds = nlohmann::json::array();
    for (int si : order) {
        const auto& sample = samples[static_cast<std::size_t>(si)];
        seeds.push_back({{"sample", sample.id}, {"seeds", sample.seeds}});
        for (int k = 0; k < nv; ++k) {
            const Variant v = options.variants[static_cast<std::size_t>(k)];
            const auto& rep = reports[static_cast<std::size_t>(si * nv + k)];
            const double p = psnr(rep.sigma, sample.truth.values);
            const double e = rel_err(rep.sigma, sample.truth.values);
            psnrs[v].push_back(p);
            errs[v].push_back(e);
            const bool masked = uses_mask(v);
            t.add_row({std::to_string(sample.id), to_string(v), format_number(rep.lambda), format_number(p),
                format_number(e), masked ? format_number(fn_rate(sample.mask, sample.reference_mask)) : "",
                std::to_string(masked ? sample.mask.count() : map.parameter_count()),
                std::to_string(rep.iterations), rep.termination, format_number(rep.objective.back()),
                format_number(rep.mu)});
        }
    }
    nlohmann::json lambdas = nlohmann::json::object();
    for (Variant v : options.variants) {
        lambdas[to_string(v)] = options.lambda.at(v);
        result.mean_psnr[v] = mean_of(psnrs[v]);
        result.mean_rel_err[v] = mean_of(errs[v]);
    }
    t.metadata = base_metadata(map, options.base);
    t.metadata["operation"] = "compare";
    t.metadata["lambda"] = lambdas;
    t.metadata["noise_level"] = options.noise_level;
    t.metadata["samples"] = seeds;
    t.metadata["psnr_peak"] = "max(truth)";
    return result;
}

// ---------------------------------------------------------------- rate

RateResult convergence_rate_study(const ForwardMap& map, const VertexAdjacency& adj, const ConductivityField& truth,
    const RateOptions& options)
{
    if (options.deltas.size() < 2)
        throw InputError("the rate study needs at least two noise levels");
    const auto [lo, hi] = std::minmax_element(options.deltas.begin(), options.deltas.end());
    if (!(*lo > 0.0))
        throw InputError("noise levels must be positive");
    if (*hi / *lo < 100.0 * (1.0 - 1e-12))
        throw InputError("noise levels must span at least two decades");
    if (!(options.C > 0.0))
        throw InputError("C must be positive");
    if (uses_mask(options.base.variant) && !options.base.regularizer.mask)
        throw InputError("masked variant requested without a mask");

    const Vector clean = map.apply(truth);
    const int count = static_cast<int>(options.deltas.size());
    std::vector<SolveReport> reports(static_cast<std::size_t>(count));
    std::vector<double> noise_norms(static_cast<std::size_t>(count));
    parallel_for(count, [&](int k) {
        const double delta = options.deltas[static_cast<std::size_t>(k)];
        // Same seed for every level: the noise direction is fixed, only its size changes.
        const NoiseDraw draw = add_noise(clean, delta, options.noise_seed);
        SolverConfig cfg = options.base;
        cfg.lambda = options.C * delta;
        if (cfg.regularizer.sigma0.size() == 0)
            cfg.regularizer.sigma0 = Vector::Ones(truth.size());
        noise_norms[static_cast<std::size_t>(k)] = draw.eta.norm();
        reports[static_cast<std::size_t>(k)] = run_pgm(map, adj, cfg.regularizer.sigma0, draw.noisy, cfg);
    });

    std::vector<int> order(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k)
        order[static_cast<std::size_t>(k)] = k;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return options.deltas[a] < options.deltas[b]; });

    RateResult result;
    Table& t = result.table;
    t.header = {"delta", "lambda", "noise_norm", "error", "rel_err", "iterations", "termination"};
    std::vector<double> lx, ly;
    for (int k : order) {
        const auto& rep = reports[static_cast<std::size_t>(k)];
        const double delta = options.deltas[static_cast<std::size_t>(k)];
        const double err = (rep.sigma - truth.values).norm();
        if (!(err > 0.0))
            throw NumericalError("reconstruction error vanished; the log-log fit is undefined");
        lx.push_back(std::log(delta));
        ly.push_back(std::log(err));
        t.add_row({format_number(delta), format_number(rep.lambda), format_number(noise_norms[k]),
            format_number(err), format_number(rel_err(rep.sigma, truth.values)), std::to_string(rep.iterations),
            rep.termination});
    }
    result.fit = least_squares_line(lx, ly);
    t.metadata = base_metadata(map, options.base);
    t.metadata["operation"] = "rate";
    t.metadata["C"] = options.C;
    t.metadata["noise_seed"] = options.noise_seed;
    t.metadata["slope"] = result.fit.slope;
    t.metadata["intercept"] = result.fit.intercept;
    t.metadata["delta_definition"] = "relative noise level; ||eta|| ~ delta ||Phi(sigma_true)||";
    return result;
}

// ---------------------------------------------------------------- cs sweep

std::vector<CsSample> single_inclusion_samples(const Mesh& mesh, const std::vector<double>& radii, const Point& center,
    double value, double background, const Box& box)
{
    const auto adj = vertex_adjacency(mesh);
    const Vector sigma0 = Vector::Constant(mesh.vertex_count(), background);
    std::vector<CsSample> out;
    for (std::size_t k = 0; k < radii.size(); ++k) {
        if (!(radii[k] > 0.0))
            throw InputError("inclusion radius must be positive");
        CsSample s;
        s.id = static_cast<int>(k);
        s.truth = rasterize(mesh, {{center, radii[k], value}}, background, box);
        s.mask = ideal_oracle(s.truth, sigma0, default_support_tolerance(box), 0, adj);
        out.push_back(std::move(s));
    }
    return out;
}

std::optional<double> interpolate_m_star(const std::vector<int>& m, const std::vector<double>& rel_err,
    double threshold)
{
    if (m.size() != rel_err.size())
        throw InputError("m and rel_err lengths differ");
    for (std::size_t k = 0; k < m.size(); ++k) {
        if (!(rel_err[k] <= threshold))
            continue;
        if (k == 0)
            return static_cast<double>(m[0]);
        const double x0 = std::log(static_cast<double>(m[k - 1]));
        const double x1 = std::log(static_cast<double>(m[k]));
        const double e0 = rel_err[k - 1];
        const double e1 = rel_err[k];
        const double t = e0 == e1 ? 1.0 : (e0 - threshold) / (e0 - e1);
        return std::exp(x0 + t * (x1 - x0));
    }
    return std::nullopt;
}

Table SweepResult::table() const
{
    Table t;
    t.header = {"sample", "s", "m", "rel_err", "psnr", "iterations", "termination", "wall_time"};
    for (const auto& r : rows)
        t.add_row({std::to_string(r.sample), std::to_string(r.s), std::to_string(r.m), format_number(r.rel_err),
            format_number(r.psnr), std::to_string(r.iterations), r.termination, format_number(r.wall_time)});
    t.metadata = metadata;
    return t;
}

Table SweepResult::curve_table() const
{
    Table t;
    t.header = {"sample", "s", "m_star"};
    for (const auto& p : curve)
        t.add_row({std::to_string(p.sample), std::to_string(p.s), p.m_star ? format_number(*p.m_star) : "not reached"});
    t.metadata = metadata;
    t.metadata["interpolation"] = "linear in log m between bracketing measurements";
    return t;
}

SweepResult cs_sweep(std::shared_ptr<const CemModel> model, const VertexAdjacency& adj,
    const std::vector<CsSample>& samples, const CsOptions& options)
{
    if (options.m_list.empty())
        throw InputError("m list is empty");
    if (!(options.threshold > 0.0))
        throw InputError("threshold must be positive");
    const int p = model->electrode_count();
    std::vector<int> ms = options.m_list;
    std::sort(ms.begin(), ms.end());
    if (std::adjacent_find(ms.begin(), ms.end()) != ms.end())
        throw InputError("m list has duplicates");
    std::vector<ForwardMap> maps;
    for (int m : ms) {
        const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(m))));
        if (m <= 0 || k * k != m)
            throw InputError("m = " + std::to_string(m) + " is not a positive square");
        if (k > p)
            throw InputError("m = " + std::to_string(m) + " needs more than " + std::to_string(p) + " electrodes");
        maps.emplace_back(model, build_protocol(options.kind, p, k, k, options.skip));
    }

    const int nm = static_cast<int>(ms.size());
    const int cells = static_cast<int>(samples.size()) * nm;
    std::vector<SweepRow> rows(static_cast<std::size_t>(cells));
    parallel_for(cells, [&](int c) {
        const auto& sample = samples[static_cast<std::size_t>(c / nm)];
        const auto& map = maps[static_cast<std::size_t>(c % nm)];
        SolverConfig cfg = options.base;
        if (cfg.regularizer.sigma0.size() == 0)
            cfg.regularizer.sigma0 = Vector::Ones(model->vertex_count());
        if (uses_mask(cfg.variant))
            cfg.regularizer.mask = sample.mask;
        const auto t0 = std::chrono::steady_clock::now();
        const Vector data = map.apply(sample.truth);
        const auto rep = run_pgm(map, adj, cfg.regularizer.sigma0, data, cfg);
        SweepRow& row = rows[static_cast<std::size_t>(c)];
        row.wall_time = seconds_since(t0);
        row.sample = sample.id;
        row.s = gradient_sparsity(sample.truth.values, adj);
        row.m = map.measurement_count();
        row.rel_err = rel_err(rep.sigma, sample.truth.values);
        row.psnr = psnr(rep.sigma, sample.truth.values);
        row.iterations = rep.iterations;
        row.termination = rep.termination;
    });
    std::stable_sort(rows.begin(), rows.end(),
        [](const SweepRow& a, const SweepRow& b) { return a.sample != b.sample ? a.sample < b.sample : a.m < b.m; });

    SweepResult result;
    result.rows = std::move(rows);
    for (std::size_t i = 0; i < result.rows.size(); i += static_cast<std::size_t>(nm)) {
        std::vector<int> m;
        std::vector<double> e;
        for (int k = 0; k < nm; ++k) {
            m.push_back(result.rows[i + k].m);
            e.push_back(result.rows[i + k].rel_err);
        }
        result.curve.push_back({result.rows[i].sample, result.rows[i].s, interpolate_m_star(m, e, options.threshold)});
    }
    std::sort(result.curve.begin(), result.curve.end(),
        [](const SweepPoint& a, const SweepPoint& b) { return a.s != b.s ? a.s < b.s : a.sample < b.sample; });

    nlohmann::json sample_info = nlohmann::json::array();
    for (const auto& s : samples)
        sample_info.push_back({{"sample", s.id}, {"support", s.mask.count()}});
    result.metadata = base_metadata(maps.front(), options.base);
    result.metadata.erase("protocol");
    result.metadata["operation"] = "cs-sweep";
    result.metadata["protocol_kind"] = to_string(options.kind);
    result.metadata["skip"] = to_string(options.skip);
    result.metadata["electrodes"] = p;
    result.metadata["m"] = ms;
    result.metadata["threshold"] = options.threshold;
    result.metadata["noise_level"] = 0.0;
    result.metadata["samples"] = sample_info;
    result.metadata["seeds"] = "none (deterministic inputs)";
    return result;
}

// ---------------------------------------------------------------- lambda grid

GridResult lambda_grid_search(const ForwardMap& map, const VertexAdjacency& adj,
    const std::vector<ExperimentSample>& samples, const std::vector<double>& grid, const SolverConfig& base)
{
    if (grid.empty())
        throw InputError("lambda grid is empty");
    if (samples.empty())
        throw InputError("lambda grid search needs at least one sample");
    for (double l : grid)
        if (!(l >= 0.0) || !std::isfinite(l))
            throw InputError("lambda values must be finite and non-negative");

    const int ns = static_cast<int>(samples.size());
    const int cells = static_cast<int>(grid.size()) * ns;
    std::vector<SolveReport> reports(static_cast<std::size_t>(cells));
    parallel_for(cells, [&](int c) {
        SolverConfig cfg = base;
        cfg.lambda = grid[static_cast<std::size_t>(c / ns)];
        reports[static_cast<std::size_t>(c)] = solve_sample(map, adj, samples[static_cast<std::size_t>(c % ns)], cfg);
    });

    GridResult result;
    Table& t = result.table;
    t.header = {"lambda", "mean_psnr", "min_psnr", "max_psnr", "mean_rel_err", "mean_iterations"};
    double best = -kInfinity;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        std::vector<double> ps, es, its;
        for (int s = 0; s < ns; ++s) {
            const auto& rep = reports[g * static_cast<std::size_t>(ns) + static_cast<std::size_t>(s)];
            ps.push_back(psnr(rep.sigma, samples[static_cast<std::size_t>(s)].truth.values));
            es.push_back(rel_err(rep.sigma, samples[static_cast<std::size_t>(s)].truth.values));
            its.push_back(rep.iterations);
        }
        const double mp = mean_of(ps);
        if (mp > best || g == 0) {
            best = mp;
            result.best_lambda = grid[g];
        }
        t.add_row({format_number(grid[g]), format_number(mp), format_number(*std::min_element(ps.begin(), ps.end())),
            format_number(*std::max_element(ps.begin(), ps.end())), format_number(mean_of(es)),
            format_number(mean_of(its))});
    }
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& s : samples)
        seeds.push_back({{"sample", s.id}, {"seeds", s.seeds}});
    t.metadata = base_metadata(map, base);
    t.metadata["operation"] = "lambda-grid";
    t.metadata["grid"] = grid;
    t.metadata["best_lambda"] = result.best_lambda;
    t.metadata["samples"] = seeds;
    return result;
}

// ---------------------------------------------------------------- plots

std::string to_string(PlotKind kind)
{
    return kind == PlotKind::Line ? "line" : "loglog";
}

PlotKind parse_plot_kind(const std::string& s)
{
    if (s == "line")
        return PlotKind::Line;
    if (s == "loglog")
        return PlotKind::LogLog;
    throw InputError("unknown plot kind '" + s + "'");
}

namespace {

constexpr const char* kCsvOpen = "<!-- eitcs-csv\n";
constexpr const char* kCsvClose = "-->";

// Comments may not contain "--"; '&' is escaped first so decoding is exact.
std::string comment_encode(const std::string& s)
{
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '&')
            out += "&amp;";
        else if (s[i] == '-' && i + 1 < s.size() && s[i + 1] == '-')
            out += "-&#45;", ++i;
        else
            out += s[i];
    }
    return out;
}

std::string comment_decode(const std::string& s)
{
    std::string out;
    for (std::size_t i = 0; i < s.size();) {
        if (s.compare(i, 5, "&amp;") == 0) {
            out += '&';
            i += 5;
        } else if (s.compare(i, 5, "&#45;") == 0) {
            out += '-';
            i += 5;
        } else {
            out += s[i++];
        }
    }
    return out;
}

std::string xml_escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::optional<double> parse_cell(const std::string& s)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v))
            return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::vector<double> linear_ticks(double lo, double hi)
{
    const double span = hi - lo;
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double f : {1.0, 2.0, 5.0, 10.0})
        if (f * mag >= raw) {
            step = f * mag;
            break;
        }
    std::vector<double> ticks;
    for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step)
        ticks.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
    return ticks;
}

std::string tick_label(double v, bool log_axis)
{
    char buf[32];
    if (log_axis)
        std::snprintf(buf, sizeof buf, "1e%d", static_cast<int>(std::lround(v)));
    else
        std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

} // namespace

std::string render_plot(const Table& table, const PlotSpec& spec)
{
    const bool log_axes = spec.kind == PlotKind::LogLog;
    const int xc = spec.x.empty() ? -1 : table.column(spec.x);
    const int yc = spec.y.empty() ? -1 : table.column(spec.y);
    const int sc = spec.series.empty() ? -1 : table.column(spec.series);

    // Series in first-appearance order.
    std::vector<std::string> names;
    std::vector<std::vector<std::pair<double, double>>> series;
    if (xc >= 0 && yc >= 0) {
        for (const auto& row : table.rows) {
            auto x = parse_cell(row[static_cast<std::size_t>(xc)]);
            auto y = parse_cell(row[static_cast<std::size_t>(yc)]);
            if (!x || !y)
                continue;
            if (log_axes) {
                if (*x <= 0.0 || *y <= 0.0)
                    continue;
                *x = std::log10(*x);
                *y = std::log10(*y);
            }
            const std::string name = sc >= 0 ? row[static_cast<std::size_t>(sc)] : spec.y;
            auto it = std::find(names.begin(), names.end(), name);
            if (it == names.end()) {
                names.push_back(name);
                series.emplace_back();
                it = names.end() - 1;
            }
            series[static_cast<std::size_t>(it - names.begin())].emplace_back(*x, *y);
        }
    }
    std::optional<double> ref;
    if (spec.reference_y && (!log_axes || *spec.reference_y > 0.0))
        ref = log_axes ? std::log10(*spec.reference_y) : *spec.reference_y;

    double x0 = kInfinity, x1 = -kInfinity, y0 = kInfinity, y1 = -kInfinity;
    for (const auto& s : series)
        for (const auto& [x, y] : s) {
            x0 = std::min(x0, x), x1 = std::max(x1, x);
            y0 = std::min(y0, y), y1 = std::max(y1, y);
        }
    if (ref)
        y0 = std::min(y0, *ref), y1 = std::max(y1, *ref);
    if (!(x0 <= x1))
        x0 = 0.0, x1 = 1.0;
    if (!(y0 <= y1))
        y0 = 0.0, y1 = 1.0;
    if (log_axes) {
        x0 = std::floor(x0), x1 = std::ceil(x1);
        y0 = std::floor(y0), y1 = std::ceil(y1);
    }
    if (x1 - x0 <= 0.0)
        x0 -= 0.5, x1 += 0.5;
    if (y1 - y0 <= 0.0)
        y0 -= 0.5, y1 += 0.5;
    if (!log_axes) {
        const double py = 0.05 * (y1 - y0);
        y0 -= py, y1 += py;
    }

    const double W = 640, H = 440, L = 80, R = 170, T = 60, B = 60;
    const double pw = W - L - R, ph = H - T - B;
    auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
    auto sy = [&](double y) { return T + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::ostringstream o;
    o.precision(6);
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << kCsvOpen << comment_encode(table.to_csv()) << kCsvClose << "\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!spec.title.empty())
        o << "<text x=\"" << L + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
          << xml_escape(spec.title) << "</text>\n";
    if (!spec.annotation.empty())
        o << "<text class=\"annotation\" x=\"" << L + pw / 2 << "\" y=\"42\" text-anchor=\"middle\">"
          << xml_escape(spec.annotation) << "</text>\n";

    auto ticks = [&](double lo, double hi) {
        if (!log_axes)
            return linear_ticks(lo, hi);
        std::vector<double> t;
        for (double v = lo; v <= hi + 1e-9; v += 1.0)
            t.push_back(v);
        return t;
    };
    o << "<g stroke=\"#dddddd\">\n";
    for (double t : ticks(x0, x1))
        o << "<line x1=\"" << sx(t) << "\" y1=\"" << T << "\" x2=\"" << sx(t) << "\" y2=\"" << T + ph << "\"/>\n";
    for (double t : ticks(y0, y1))
        o << "<line x1=\"" << L << "\" y1=\"" << sy(t) << "\" x2=\"" << L + pw << "\" y2=\"" << sy(t) << "\"/>\n";
    o << "</g>\n";
    o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (double t : ticks(x0, x1))
        o << "<text x=\"" << sx(t) << "\" y=\"" << T + ph + 18 << "\" text-anchor=\"middle\">"
          << tick_label(t, log_axes) << "</text>\n";
    for (double t : ticks(y0, y1))
        o << "<text x=\"" << L - 6 << "\" y=\"" << sy(t) + 4 << "\" text-anchor=\"end\">" << tick_label(t, log_axes)
          << "</text>\n";
    const std::string xl = spec.x_label.empty() ? spec.x : spec.x_label;
    const std::string yl = spec.y_label.empty() ? spec.y : spec.y_label;
    o << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 16 << "\" text-anchor=\"middle\">" << xml_escape(xl)
      << "</text>\n";
    o << "<text transform=\"translate(18," << T + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << xml_escape(yl) << "</text>\n";

    if (ref)
        o << "<line class=\"reference\" x1=\"" << L << "\" y1=\"" << sy(*ref) << "\" x2=\"" << L + pw << "\" y2=\""
          << sy(*ref) << "\" stroke=\"red\" stroke-width=\"1.5\"/>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* color = kPalette[k % std::size(kPalette)];
        o << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
        for (const auto& [x, y] : series[k])
            o << sx(x) << ',' << sy(y) << ' ';
        o << "\"/>\n";
        for (const auto& [x, y] : series[k])
            o << "<circle cx=\"" << sx(x) << "\" cy=\"" << sy(y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        const double ly = T + 14 + 18.0 * static_cast<double>(k);
        o << "<line x1=\"" << L + pw + 14 << "\" y1=\"" << ly << "\" x2=\"" << L + pw + 34 << "\" y2=\"" << ly
          << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        o << "<text class=\"legend\" x=\"" << L + pw + 40 << "\" y=\"" << ly + 4 << "\">"
          << xml_escape((sc >= 0 ? spec.series + " " : std::string()) + names[k]) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

void emit_plot(const Table& table, const PlotSpec& spec, const std::filesystem::path& path)
{
    write_text(render_plot(table, spec), path);
}

Table table_from_svg(const std::string& svg)
{
    const auto start = svg.find(kCsvOpen);
    if (start == std::string::npos)
        throw FormatError("SVG carries no embedded table");
    const auto body = start + std::char_traits<char>::length(kCsvOpen);
    const auto end = svg.find(kCsvClose, body);
    if (end == std::string::npos)
        throw FormatError("embedded table comment is not terminated");
    return Table::from_csv(comment_decode(svg.substr(body, end - body)));
}

} // namespace eitcs
