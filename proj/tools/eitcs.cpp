// Command-line front end: mesh and dataset generation, forward solves,
// reconstructions, ideal masks, experiments and metrics.
//
// Exit codes: 0 success, 1 runtime failure (JSON error object on stderr),
// 2 usage error.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "eitcs/experiments.hpp"
#include "eitcs/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace eitcs;

namespace {

const std::vector<std::string> kVariantNames{"pgm-l1", "pgm-tv", "pgm-l1-mo", "pgm-tv-mo"};
const std::vector<std::string> kProtocolKinds{"adjacent-adjacent", "opposite-adjacent"};
const std::vector<std::string> kSkipRules{"none", "injecting-pair", "injecting-electrodes"};

// Options that say where to run or write, not what to compute; kept out of the echo.
bool echo_excluded(const std::string& name)
{
    return name == "help" || name == "config" || name == "threads" || name == "out";
}

// Resolved value of every option of `app` (flags > config file > defaults).
json resolved_options(const CLI::App* app)
{
    json out = json::object();
    for (const CLI::Option* opt : app->get_options()) {
        const auto& names = opt->get_lnames();
        if (names.empty() || echo_excluded(names.front()))
            continue;
        const auto results = opt->reduced_results();
        if (opt->count() > 0)
            out[names.front()] = results.size() == 1 ? json(results.front()) : json(results);
        else
            out[names.front()] = opt->get_default_str();
    }
    return out;
}

json resolved_config(const CLI::App& root, const CLI::App* sub)
{
    json j = {{"global", resolved_options(&root)}};
    std::string path;
    for (const CLI::App* a = sub; a && a != &root; a = a->get_parent())
        path = path.empty() ? a->get_name() : a->get_name() + " " + path;
    j["command"] = path;
    j["options"] = resolved_options(sub);
    return j;
}

void write_json_file(const json& j, const fs::path& path)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << j.dump(1) << '\n';
}

std::vector<double> parse_number_list(const std::string& text, const char* what)
{
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size())
                throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw CLI::ValidationError(what, "'" + item + "' is not a number");
        }
    }
    if (out.empty())
        throw CLI::ValidationError(what, "empty list");
    return out;
}

Point parse_point(const std::string& text)
{
    const auto v = parse_number_list(text, "--center");
    if (v.size() != 2)
        throw CLI::ValidationError("--center", "expected x,y");
    return {v[0], v[1]};
}

Box parse_box(const std::string& text)
{
    const auto v = parse_number_list(text, "--box");
    if (v.size() != 2)
        throw CLI::ValidationError("--box", "expected lower,upper");
    Box b{v[0], v[1]};
    b.validate();
    return b;
}

// Mesh given by file, or the structured disk at the requested resolution.
struct MeshArgs {
    std::string file;
    double h = 0.08;
    int electrodes = 16;
    double coverage = 0.5;
    bool paper_scale = false;

    void add(CLI::App* app, int default_electrodes = 16)
    {
        electrodes = default_electrodes;
        app->add_option("--mesh", file, "Mesh JSON file (otherwise a disk mesh is generated)");
        app->add_option("--target-h", h, "Target edge length of the generated disk mesh")->capture_default_str();
        app->add_option("--electrodes", electrodes, "Electrode count of the generated mesh")->capture_default_str();
        app->add_option("--coverage", coverage, "Fraction of the boundary under electrodes")->capture_default_str();
        app->add_flag("--paper-scale", paper_scale, "Generate the reference-size mesh (h 0.044, 32 electrodes)");
    }

    Mesh load() const
    {
        if (!file.empty())
            return read_mesh(file);
        DiskMeshSpec spec;
        spec.target_h = paper_scale ? 0.044 : h;
        spec.electrodes = paper_scale ? 32 : electrodes;
        spec.coverage = coverage;
        return build_disk_mesh(spec);
    }
};

struct ProtocolArgs {
    std::string file;
    std::string kind = "opposite-adjacent";
    int injections = 0;
    int measurements = 0;
    std::string skip = "none";

    void add(CLI::App* app)
    {
        app->add_option("--protocol", file, "Protocol JSON file (otherwise built from the options below)");
        app->add_option("--protocol-kind", kind, "Protocol kind")
            ->check(CLI::IsMember(kProtocolKinds))
            ->capture_default_str();
        app->add_option("--injections", injections, "Number of current patterns (0 = all electrodes)")
            ->capture_default_str();
        app->add_option("--measurements", measurements, "Number of voltage pairs (0 = all electrodes)")
            ->capture_default_str();
        app->add_option("--skip", skip, "Readings to drop")->check(CLI::IsMember(kSkipRules))->capture_default_str();
    }

    Protocol load(const Mesh& mesh) const
    {
        if (!file.empty()) {
            Protocol p = read_protocol(file);
            if (p.electrodes != mesh.electrode_count())
                throw InputError("protocol electrode count does not match the mesh");
            return p;
        }
        const int p = mesh.electrode_count();
        return build_protocol(parse_protocol_kind(kind), p, injections > 0 ? injections : p,
            measurements > 0 ? measurements : p, parse_skip_rule(skip));
    }
};

struct ForwardArgs {
    int order = 1;
    double contact_impedance = 1e-2;

    void add(CLI::App* app)
    {
        app->add_option("--order", order, "Lagrange order of the potential")
            ->check(CLI::IsMember({1, 2}))
            ->capture_default_str();
        app->add_option("--contact-impedance", contact_impedance, "Contact impedance z")->capture_default_str();
    }

    CemOptions options() const { return {order, contact_impedance}; }
};

struct SolverArgs {
    std::string variant = "pgm-tv-mo";
    double lambda = 1e-7;
    double rho = 1e-12;
    std::optional<double> mu;
    int max_iters = 500;
    double tol = 1e-6;
    double sigma0 = 1.0;
    std::string box = "0.1,3.0";
    std::string tv_method = "exact";
    int tv_sweeps = 50;
    bool tv_relative = false;

    void add(CLI::App* app, bool with_variant = true, bool with_lambda = true)
    {
        if (with_variant)
            app->add_option("--variant", variant, "Solver variant")
                ->check(CLI::IsMember(kVariantNames))
                ->capture_default_str();
        if (with_lambda)
            app->add_option("--lambda", lambda, "Regularization weight")->capture_default_str();
        app->add_option("--rho", rho, "Weight of the quadratic term")->capture_default_str();
        app->add_option("--mu", mu, "Fixed step size (default: spectral estimate)");
        app->add_option("--max-iters", max_iters, "Iteration cap")->capture_default_str();
        app->add_option("--tol", tol, "Relative-change stopping tolerance")->capture_default_str();
        app->add_option("--sigma0", sigma0, "Reference (background) conductivity")->capture_default_str();
        app->add_option("--box", box, "Admissible range lower,upper")->capture_default_str();
        app->add_option("--tv-method", tv_method, "TV prox solver")
            ->check(CLI::IsMember({"exact", "sweeps"}))
            ->capture_default_str();
        app->add_option("--tv-sweeps", tv_sweeps, "Sweep cap of the sweeps TV solver")->capture_default_str();
        app->add_flag("--tv-relative", tv_relative, "Penalize TV(sigma - sigma0)");
    }

    SolverConfig config(int n) const
    {
        SolverConfig c;
        c.variant = parse_variant(variant);
        c.lambda = lambda;
        c.rho = rho;
        c.mu = mu;
        c.max_iters = max_iters;
        c.tol = tol;
        c.regularizer.sigma0 = Vector::Constant(n, sigma0);
        c.regularizer.box = parse_box(box);
        c.regularizer.tv_method = parse_tv_method(tv_method);
        c.regularizer.max_sweeps = tv_sweeps;
        c.regularizer.tv_relative = tv_relative;
        return c;
    }
};

ConductivityField load_field(const fs::path& path, const Mesh& mesh, const Box& box = {})
{
    ConductivityField f{read_array(path), box, mesh_digest(mesh)};
    if (f.size() != mesh.vertex_count())
        throw InputError(path.string() + " has " + std::to_string(f.size()) + " values but the mesh has " +
            std::to_string(mesh.vertex_count()) + " vertices");
    return f;
}

void print_json(const json& j)
{
    std::cout << j.dump(1) << std::endl;
}

// ------------------------------------------------------------ subcommands

struct MeshGen {
    MeshArgs mesh;
    std::string out = "mesh.json";

    void run(const json& echo) const
    {
        const Mesh m = mesh.load();
        write_mesh(m, out);
        print_json({{"mesh", out}, {"vertices", m.vertex_count()}, {"triangles", m.triangle_count()},
            {"electrodes", m.electrode_count()}, {"mesh_digest", mesh_digest(m)}, {"config", echo}});
    }
};

struct DatasetGen {
    MeshArgs mesh;
    ProtocolArgs protocol;
    ForwardArgs forward;
    int samples = 10;
    double noise = 0.0;
    int dilation = 0;
    int min_inclusions = 1;
    int max_inclusions = 4;
    double min_radius = 0.15;
    double max_radius = 0.25;
    std::string box = "0.1,3.0";
    std::string out = "dataset";

    void run(std::uint64_t seed, const json& echo) const
    {
        const Mesh m = mesh.load();
        const Protocol p = protocol.load(m);
        DatasetConfig cfg;
        cfg.samples = samples;
        cfg.seed = seed;
        cfg.noise_level = noise;
        cfg.dilation_hops = dilation;
        cfg.phantom.min_inclusions = min_inclusions;
        cfg.phantom.max_inclusions = max_inclusions;
        cfg.phantom.min_radius = min_radius;
        cfg.phantom.max_radius = max_radius;
        cfg.box = parse_box(box);
        const auto manifest = generate_dataset(m, p, cfg, forward.options(), out);
        // Record the invocation alongside the manifest fields.
        const fs::path path = fs::path(out) / "manifest.json";
        std::ifstream in(path);
        json j = json::parse(in);
        j["invocation"] = echo;
        write_json_file(j, path);
        print_json({{"dataset", out}, {"samples", manifest.samples.size()}, {"vertices", manifest.vertices},
            {"measurements", manifest.measurements}, {"mesh_digest", manifest.mesh_digest},
            {"train", manifest.train.size()}, {"validation", manifest.validation.size()},
            {"test", manifest.test.size()}});
    }
};

struct Forward {
    MeshArgs mesh;
    ProtocolArgs protocol;
    ForwardArgs forward;
    std::string sigma;
    double noise = 0.0;
    std::string out = "data.eitb";

    void run(std::uint64_t seed, const json& echo) const
    {
        const Mesh m = mesh.load();
        const Protocol p = protocol.load(m);
        auto model = std::make_shared<CemModel>(m, forward.options());
        ForwardMap map(model, p);
        const ConductivityField field = load_field(sigma, m);
        const Vector clean = map.apply(field);
        write_array(clean, out);
        json result = {{"clean", out}, {"measurements", clean.size()}, {"mesh_digest", model->mesh_digest()},
            {"config", echo}};
        if (noise > 0.0) {
            const NoiseDraw draw = add_noise(clean, noise, seed);
            fs::path noisy = out;
            noisy.replace_extension(".noisy.eitb");
            write_array(draw.noisy, noisy);
            result["noisy"] = noisy.string();
            result["delta"] = draw.eta.norm();
            result["snr_db"] = draw.snr_db;
        }
        print_json(result);
    }
};

struct Reconstruct {
    MeshArgs mesh;
    ProtocolArgs protocol;
    ForwardArgs forward;
    SolverArgs solver;
    std::string dataset;
    int sample = -1;
    bool noisy = false;
    std::string data;
    std::string mask;
    std::string out = "reconstruction";

    void run(const json& echo) const
    {
        Mesh m;
        Protocol p;
        CemOptions fopt = forward.options();
        Vector y;
        std::optional<OracleMask> dataset_mask;
        std::optional<ConductivityField> truth;
        if (!dataset.empty()) {
            if (sample < 0)
                throw InputError("--dataset needs --sample");
            const auto loaded = load_dataset(dataset);
            m = loaded.mesh;
            p = loaded.protocol;
            fopt = loaded.manifest.forward;
            if (sample >= static_cast<int>(loaded.manifest.samples.size()))
                throw InputError("sample index out of range");
            SampleData s = load_sample(dataset, loaded, sample);
            y = noisy ? s.noisy : s.clean;
            dataset_mask = s.mask;
            truth = s.truth;
        } else {
            if (data.empty())
                throw InputError("give --data (with --mesh and a protocol) or --dataset and --sample");
            m = mesh.load();
            p = protocol.load(m);
            y = read_array(data);
        }
        auto model = std::make_shared<CemModel>(m, fopt);
        ForwardMap map(model, p);
        if (y.size() != map.measurement_count())
            throw InputError("data length does not match the protocol");
        const auto adj = vertex_adjacency(m);
        SolverConfig cfg = solver.config(m.vertex_count());
        if (uses_mask(cfg.variant)) {
            if (!mask.empty())
                cfg.regularizer.mask = read_mask(mask, model->mesh_digest());
            else if (dataset_mask)
                cfg.regularizer.mask = dataset_mask;
            else
                throw InputError("masked variant needs --mask");
        }
        const SolveReport rep = run_pgm(map, adj, cfg.regularizer.sigma0, y, cfg);
        const fs::path sigma_path = out + ".sigma.eitb";
        if (sigma_path.has_parent_path())
            fs::create_directories(sigma_path.parent_path());
        write_array(rep.sigma, sigma_path);
        write_array_csv(rep.sigma, out + ".sigma.csv");
        json report = rep.to_json();
        report["config"] = echo;
        report["solver"] = cfg.to_json();
        report["mesh_digest"] = model->mesh_digest();
        report["sigma_file"] = sigma_path.string();
        if (truth) {
            report["psnr"] = psnr(rep.sigma, truth->values);
            report["rel_err"] = rel_err(rep.sigma, truth->values);
        }
        write_json_file(report, out + ".report.json");
        print_json({{"report", out + ".report.json"}, {"sigma", sigma_path.string()},
            {"iterations", rep.iterations}, {"termination", rep.termination},
            {"objective", rep.objective.back()}, {"psnr", report.value("psnr", json(nullptr))}});
    }
};

struct OracleIdeal {
    MeshArgs mesh;
    std::string sigma;
    double sigma0 = 1.0;
    std::optional<double> tol;
    int hops = 0;
    std::string box = "0.1,3.0";
    std::string out = "mask.json";

    void run(const json& echo) const
    {
        const Mesh m = mesh.load();
        const Box b = parse_box(box);
        const ConductivityField truth = load_field(sigma, m, b);
        const auto adj = vertex_adjacency(m);
        const OracleMask msk = ideal_oracle(truth, Vector::Constant(m.vertex_count(), sigma0),
            tol ? *tol : default_support_tolerance(b), hops, adj);
        write_mask(msk, out);
        print_json({{"mask", out}, {"active", msk.count()}, {"size", msk.size()}, {"mesh_digest", msk.mesh_digest},
            {"config", echo}});
    }
};

struct Metrics {
    std::string truth;
    std::string reconstruction;
    std::string mesh;
    std::string mask;
    std::string reference_mask;
    std::optional<double> peak;

    void run() const
    {
        const Vector t = read_array(truth);
        const Vector r = read_array(reconstruction);
        if (t.size() != r.size())
            throw InputError("truth and reconstruction lengths differ");
        json j = {{"psnr", peak ? psnr(r, t, *peak) : psnr(r, t)}, {"rel_err", rel_err(r, t)},
            {"psnr_peak", peak ? json(*peak) : json("max(truth)")}};
        if (!mesh.empty()) {
            const Mesh m = read_mesh(mesh);
            if (m.vertex_count() != t.size())
                throw InputError("mesh does not match the arrays");
            const auto adj = vertex_adjacency(m);
            j["gradient_sparsity_truth"] = gradient_sparsity(t, adj);
            j["gradient_sparsity_reconstruction"] = gradient_sparsity(r, adj);
        }
        if (!mask.empty() || !reference_mask.empty()) {
            if (mask.empty() || reference_mask.empty())
                throw InputError("FN needs both --mask and --reference-mask");
            j["fn"] = fn_rate(read_mask(mask), read_mask(reference_mask));
        }
        print_json(j);
    }
};

// Lambda per variant from "v=value" entries or a single value for all.
std::map<Variant, double> parse_lambdas(const std::vector<std::string>& entries)
{
    std::map<Variant, double> out;
    for (const auto& e : entries) {
        const auto eq = e.find('=');
        if (eq == std::string::npos) {
            const double v = parse_number_list(e, "--lambda").at(0);
            for (Variant var : kAllVariants)
                out[var] = v;
            continue;
        }
        Variant var;
        try {
            var = parse_variant(e.substr(0, eq));
        } catch (const InputError&) {
            throw CLI::ValidationError("--lambda", "unknown variant in '" + e + "'");
        }
        out[var] = parse_number_list(e.substr(eq + 1), "--lambda").at(0);
    }
    return out;
}

struct ExpCompare {
    std::string dataset;
    std::vector<std::string> lambdas{"1e-7"};
    std::vector<std::string> variants = kVariantNames;
    std::string split = "test";
    bool noisy = false;
    SolverArgs solver;
    std::string out = "compare";

    void run(const json& echo) const
    {
        const auto loaded = load_dataset(dataset);
        auto model = std::make_shared<CemModel>(loaded.mesh, loaded.manifest.forward);
        ForwardMap map(model, loaded.protocol);
        const auto adj = vertex_adjacency(loaded.mesh);
        std::vector<int> indices;
        if (split == "train")
            indices = loaded.manifest.train;
        else if (split == "validation")
            indices = loaded.manifest.validation;
        else if (split == "test")
            indices = loaded.manifest.test;
        if (split != "all" && indices.empty())
            throw InputError("split '" + split + "' is empty");
        const auto samples = dataset_samples(dataset, loaded, indices, noisy);
        CompareOptions opt;
        opt.variants.clear();
        for (const auto& v : variants)
            opt.variants.push_back(parse_variant(v));
        opt.lambda = parse_lambdas(lambdas);
        opt.base = solver.config(loaded.mesh.vertex_count());
        opt.base.regularizer.sigma0 = Vector::Constant(loaded.mesh.vertex_count(), loaded.manifest.config.phantom.background);
        opt.base.regularizer.box = loaded.manifest.config.box;
        opt.noise_level = noisy ? loaded.manifest.config.noise_level : 0.0;
        auto res = compare_variants(map, adj, samples, opt);
        res.table.metadata["config"] = echo;
        res.table.metadata["split"] = split;
        const fs::path dir = out;
        write_table(res.table, dir / "compare.csv");
        emit_plot(res.table, {PlotKind::Line, "sample", "psnr", "variant", "PSNR per sample", "sample", "PSNR (dB)", "", {}},
            dir / "compare.svg");
        json means = json::object();
        for (const auto& [v, p] : res.mean_psnr)
            means[to_string(v)] = p;
        print_json({{"table", (dir / "compare.csv").string()}, {"mean_psnr", means}});
    }
};

struct ExpRate {
    MeshArgs mesh;
    ProtocolArgs protocol;
    ForwardArgs forward;
    SolverArgs solver;
    double C = 1e-3;
    std::string deltas = "1e-4,3e-4,1e-3,3e-3,1e-2";
    std::string center = "0.3,0.2";
    double radius = 0.25;
    double value = 2.0;
    std::string out = "rate";

    void run(std::uint64_t seed, const json& echo) const
    {
        const Mesh m = mesh.load();
        auto model = std::make_shared<CemModel>(m, forward.options());
        ForwardMap map(model, protocol.load(m));
        const auto adj = vertex_adjacency(m);
        RateOptions opt;
        opt.C = C;
        opt.deltas = parse_number_list(deltas, "--deltas");
        opt.noise_seed = seed;
        opt.base = solver.config(m.vertex_count());
        const ConductivityField truth =
            rasterize(m, {{parse_point(center), radius, value}}, solver.sigma0, opt.base.regularizer.box);
        if (uses_mask(opt.base.variant))
            opt.base.regularizer.mask = ideal_oracle(truth, opt.base.regularizer.sigma0,
                default_support_tolerance(opt.base.regularizer.box), 0, adj);
        auto res = convergence_rate_study(map, adj, truth, opt);
        res.table.metadata["config"] = echo;
        const fs::path dir = out;
        write_table(res.table, dir / "rate.csv");
        emit_plot(res.table,
            {PlotKind::LogLog, "delta", "error", "", "Error against noise level (lambda = C delta)", "delta",
                "||sigma - sigma_true||", "fitted slope " + format_number(res.fit.slope), {}},
            dir / "rate.svg");
        print_json({{"table", (dir / "rate.csv").string()}, {"slope", res.fit.slope}});
    }
};

struct ExpCsSweep {
    MeshArgs mesh;
    ForwardArgs forward;
    SolverArgs solver;
    std::string kind = "opposite-adjacent";
    std::string skip = "none";
    std::string m_list = "16,64,256,1024";
    std::string radii = "0.25,0.3,0.35,0.4";
    std::string center = "0.3,0.0";
    double value = 2.0;
    std::optional<double> threshold;
    std::string out = "cs_sweep";

    void run(const json& echo) const
    {
        const Mesh m = mesh.load();
        auto model = std::make_shared<CemModel>(m, forward.options());
        const auto adj = vertex_adjacency(m);
        CsOptions opt;
        opt.kind = parse_protocol_kind(kind);
        opt.skip = parse_skip_rule(skip);
        opt.m_list.clear();
        for (double v : parse_number_list(m_list, "--m")) {
            const double k = std::round(std::sqrt(v));
            if (v != std::floor(v) || v <= 0 || k * k != v)
                throw CLI::ValidationError("--m", "entries must be perfect squares (k drives x k readings)");
            opt.m_list.push_back(static_cast<int>(v));
        }
        opt.threshold = threshold ? *threshold : (mesh.paper_scale ? 5e-5 : 1e-3);
        opt.base = solver.config(m.vertex_count());
        opt.base.variant = parse_variant(solver.variant);
        const auto samples = single_inclusion_samples(m, parse_number_list(radii, "--radii"), parse_point(center),
            value, solver.sigma0, opt.base.regularizer.box);
        auto res = cs_sweep(model, adj, samples, opt);
        res.metadata["config"] = echo;
        const fs::path dir = out;
        const Table table = res.table();
        const Table curve = res.curve_table();
        write_table(table, dir / "cs_sweep.csv");
        write_table(curve, dir / "cs_curve.csv");
        emit_plot(table, {PlotKind::LogLog, "m", "rel_err", "s", "Relative error against measurements", "m", "rel_err",
                             "threshold " + format_number(opt.threshold), opt.threshold},
            dir / "cs_sweep.svg");
        emit_plot(curve, {PlotKind::Line, "s", "m_star", "", "Measurements needed against gradient sparsity", "s",
                             "m* (log-linear interpolation)", "", {}},
            dir / "cs_curve.svg");
        json pts = json::array();
        for (const auto& pnt : res.curve)
            pts.push_back({{"sample", pnt.sample}, {"s", pnt.s},
                {"m_star", pnt.m_star ? json(*pnt.m_star) : json("not reached")}});
        print_json({{"table", (dir / "cs_sweep.csv").string()}, {"curve", pts}});
    }
};

struct ExpLambdaGrid {
    std::string dataset;
    std::string grid = "1e-8,1e-7,1e-6,1e-5";
    std::string split = "validation";
    bool noisy = false;
    SolverArgs solver;
    std::string out = "lambda_grid";

    void run(const json& echo) const
    {
        const auto loaded = load_dataset(dataset);
        auto model = std::make_shared<CemModel>(loaded.mesh, loaded.manifest.forward);
        ForwardMap map(model, loaded.protocol);
        const auto adj = vertex_adjacency(loaded.mesh);
        std::vector<int> indices = split == "train" ? loaded.manifest.train
            : split == "test"                       ? loaded.manifest.test
            : split == "validation"                 ? loaded.manifest.validation
                                                    : std::vector<int>{};
        if (split != "all" && indices.empty())
            throw InputError("split '" + split + "' is empty");
        const auto samples = dataset_samples(dataset, loaded, indices, noisy);
        SolverConfig base = solver.config(loaded.mesh.vertex_count());
        base.regularizer.sigma0 = Vector::Constant(loaded.mesh.vertex_count(), loaded.manifest.config.phantom.background);
        base.regularizer.box = loaded.manifest.config.box;
        auto res = lambda_grid_search(map, adj, samples, parse_number_list(grid, "--grid"), base);
        res.table.metadata["config"] = echo;
        res.table.metadata["split"] = split;
        const fs::path dir = out;
        write_table(res.table, dir / "lambda_grid.csv");
        emit_plot(res.table, {PlotKind::Line, "lambda", "mean_psnr", "", "Mean PSNR over the lambda grid", "lambda",
                                 "mean PSNR (dB)", "best lambda " + format_number(res.best_lambda), {}},
            dir / "lambda_grid.svg");
        print_json({{"table", (dir / "lambda_grid.csv").string()}, {"best_lambda", res.best_lambda}});
    }
};

void print_error(const char* type, const std::string& message)
{
    std::cerr << json{{"error", {{"type", type}, {"message", message}}}}.dump() << std::endl;
}

int apply_threads(int requested)
{
    if (requested < 0)
        throw CLI::ValidationError("--threads", "must be non-negative");
    if (requested > 0)
        set_thread_count(requested);
    return thread_count();
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Sparsity-aware EIT reconstruction toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "TOML configuration file (flags take precedence)");
    int threads = 0;
    std::uint64_t seed = 1;
    app.add_option("--threads", threads, "Worker threads (0 = all cores)")->envname("EIT_CS_THREADS");
    app.add_option("--seed", seed, "Seed for all randomness")->capture_default_str();

    MeshGen mesh_gen;
    auto* c_mesh = app.add_subcommand("mesh-gen", "Generate a disk mesh with boundary electrodes");
    mesh_gen.mesh.add(c_mesh);
    c_mesh->add_option("--out", mesh_gen.out, "Output mesh JSON")->capture_default_str();

    DatasetGen ds;
    auto* c_ds = app.add_subcommand("dataset-gen", "Generate phantoms, measurements and ideal masks");
    ds.mesh.add(c_ds);
    ds.protocol.add(c_ds);
    ds.forward.add(c_ds);
    c_ds->add_option("--n-samples", ds.samples, "Number of samples")->capture_default_str();
    c_ds->add_option("--noise", ds.noise, "Relative noise level")->capture_default_str();
    c_ds->add_option("--dilation", ds.dilation, "Mask dilation in graph hops")->capture_default_str();
    c_ds->add_option("--min-inclusions", ds.min_inclusions)->capture_default_str();
    c_ds->add_option("--max-inclusions", ds.max_inclusions)->capture_default_str();
    c_ds->add_option("--min-radius", ds.min_radius)->capture_default_str();
    c_ds->add_option("--max-radius", ds.max_radius)->capture_default_str();
    c_ds->add_option("--box", ds.box, "Admissible range lower,upper")->capture_default_str();
    c_ds->add_option("--out", ds.out, "Output directory")->capture_default_str();

    Forward fwd;
    auto* c_fwd = app.add_subcommand("forward", "Simulate measurements for a conductivity");
    fwd.mesh.add(c_fwd);
    fwd.protocol.add(c_fwd);
    fwd.forward.add(c_fwd);
    c_fwd->add_option("--sigma", fwd.sigma, "Conductivity array (.eitb)")->required();
    c_fwd->add_option("--noise", fwd.noise, "Relative noise level for an extra noisy copy")->capture_default_str();
    c_fwd->add_option("--out", fwd.out, "Output measurement array")->capture_default_str();

    Reconstruct rec;
    auto* c_rec = app.add_subcommand("reconstruct", "Run the proximal gradient solver");
    rec.mesh.add(c_rec);
    rec.protocol.add(c_rec);
    rec.forward.add(c_rec);
    rec.solver.add(c_rec);
    c_rec->add_option("--dataset", rec.dataset, "Dataset directory");
    c_rec->add_option("--sample", rec.sample, "Sample index within the dataset");
    c_rec->add_flag("--noisy", rec.noisy, "Use the noisy measurements of the dataset sample");
    c_rec->add_option("--data", rec.data, "Measurement array (.eitb)");
    c_rec->add_option("--mask", rec.mask, "Oracle mask JSON");
    c_rec->add_option("--out", rec.out, "Output prefix")->capture_default_str();

    OracleIdeal oi;
    auto* c_oi = app.add_subcommand("oracle-ideal", "Support mask of a known conductivity");
    oi.mesh.add(c_oi);
    c_oi->add_option("--sigma", oi.sigma, "Conductivity array (.eitb)")->required();
    c_oi->add_option("--sigma0", oi.sigma0, "Reference conductivity")->capture_default_str();
    c_oi->add_option("--tol", oi.tol, "Support tolerance (default 1e-6 of the box width)");
    c_oi->add_option("--hops", oi.hops, "Dilation in graph hops")->capture_default_str();
    c_oi->add_option("--box", oi.box)->capture_default_str();
    c_oi->add_option("--out", oi.out)->capture_default_str();

    auto* c_exp = app.add_subcommand("experiment", "Studies emitting CSV tables and SVG plots");
    c_exp->require_subcommand(1);
    c_exp->fallthrough();

    ExpCompare cmp;
    auto* c_cmp = c_exp->add_subcommand("compare", "All variants on dataset samples");
    c_cmp->add_option("--dataset", cmp.dataset)->required();
    c_cmp->add_option("--lambda", cmp.lambdas, "Value for all variants, or variant=value entries")
        ->delimiter(',')
        ->capture_default_str();
    c_cmp->add_option("--variants", cmp.variants)->delimiter(',')->check(CLI::IsMember(kVariantNames));
    c_cmp->add_option("--split", cmp.split)
        ->check(CLI::IsMember({"train", "validation", "test", "all"}))
        ->capture_default_str();
    c_cmp->add_flag("--noisy", cmp.noisy, "Invert the noisy measurements");
    cmp.solver.add(c_cmp, false, false);
    c_cmp->add_option("--out", cmp.out)->capture_default_str();

    ExpRate rate;
    auto* c_rate = c_exp->add_subcommand("rate", "Error against noise level with lambda = C delta");
    rate.mesh.add(c_rate);
    rate.protocol.add(c_rate);
    rate.forward.add(c_rate);
    rate.solver.add(c_rate, true, false);
    c_rate->add_option("--C", rate.C)->capture_default_str();
    c_rate->add_option("--deltas", rate.deltas)->capture_default_str();
    c_rate->add_option("--center", rate.center)->capture_default_str();
    c_rate->add_option("--radius", rate.radius)->capture_default_str();
    c_rate->add_option("--value", rate.value)->capture_default_str();
    c_rate->add_option("--out", rate.out)->capture_default_str();

    ExpCsSweep cs;
    auto* c_cs = c_exp->add_subcommand("cs-sweep", "Relative error against number of measurements");
    cs.mesh.add(c_cs, 32);
    cs.forward.add(c_cs);
    cs.solver.lambda = 1e-9;
    cs.solver.max_iters = 25000;
    cs.solver.tol = 1e-10;
    cs.solver.add(c_cs);
    c_cs->add_option("--protocol-kind", cs.kind)->check(CLI::IsMember(kProtocolKinds))->capture_default_str();
    c_cs->add_option("--skip", cs.skip)->check(CLI::IsMember(kSkipRules))->capture_default_str();
    c_cs->add_option("--m", cs.m_list, "Measurement counts (squares)")->capture_default_str();
    c_cs->add_option("--radii", cs.radii, "Inclusion radii, one sample each")->capture_default_str();
    c_cs->add_option("--center", cs.center)->capture_default_str();
    c_cs->add_option("--value", cs.value)->capture_default_str();
    c_cs->add_option("--threshold", cs.threshold, "rel_err threshold (1e-3, or 5e-5 with --paper-scale)");
    c_cs->add_option("--out", cs.out)->capture_default_str();

    ExpLambdaGrid grid;
    auto* c_grid = c_exp->add_subcommand("lambda-grid", "Pick lambda by mean PSNR");
    c_grid->add_option("--dataset", grid.dataset)->required();
    c_grid->add_option("--grid", grid.grid)->capture_default_str();
    c_grid->add_option("--split", grid.split)
        ->check(CLI::IsMember({"train", "validation", "test", "all"}))
        ->capture_default_str();
    c_grid->add_flag("--noisy", grid.noisy);
    grid.solver.add(c_grid, true, false);
    c_grid->add_option("--out", grid.out)->capture_default_str();

    Metrics met;
    auto* c_met = app.add_subcommand("metrics", "PSNR, relative error, sparsity and FN");
    c_met->add_option("--truth", met.truth)->required();
    c_met->add_option("--reconstruction", met.reconstruction)->required();
    c_met->add_option("--mesh", met.mesh, "Mesh JSON for gradient sparsity");
    c_met->add_option("--mask", met.mask, "Predicted mask for FN");
    c_met->add_option("--reference-mask", met.reference_mask, "True support mask for FN");
    c_met->add_option("--peak", met.peak, "PSNR peak (default max(truth))");

    try {
        app.parse(argc, argv);
        apply_threads(threads);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("UsageError", e.what());
        return 2;
    }

    const CLI::App* chosen = app.get_subcommands().front();
    while (!chosen->get_subcommands().empty())
        chosen = chosen->get_subcommands().front();
    const json echo = resolved_config(app, chosen);
    std::cerr << json{{"resolved_config", echo}}.dump() << std::endl;

    try {
        if (chosen == c_mesh)
            mesh_gen.run(echo);
        else if (chosen == c_ds)
            ds.run(seed, echo);
        else if (chosen == c_fwd)
            fwd.run(seed, echo);
        else if (chosen == c_rec)
            rec.run(echo);
        else if (chosen == c_oi)
            oi.run(echo);
        else if (chosen == c_cmp)
            cmp.run(echo);
        else if (chosen == c_rate)
            rate.run(seed, echo);
        else if (chosen == c_cs)
            cs.run(echo);
        else if (chosen == c_grid)
            grid.run(echo);
        else if (chosen == c_met)
            met.run();
    } catch (const CLI::ValidationError& e) {
        print_error("UsageError", e.what());
        return 2;
    } catch (const InputError& e) {
        print_error("InputError", e.what());
        return 1;
    } catch (const FormatError& e) {
        print_error("FormatError", e.what());
        return 1;
    } catch (const NumericalError& e) {
        print_error("NumericalError", e.what());
        return 1;
    } catch (const std::exception& e) {
        print_error("RuntimeError", e.what());
        return 1;
    }
    return 0;
}
