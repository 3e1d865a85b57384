#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "eitcs/experiments.hpp"

using namespace eitcs;

namespace {

struct Small {
    Mesh mesh = build_disk_mesh({1.0, 0.2, 8, 0.5});
    std::shared_ptr<CemModel> model = std::make_shared<CemModel>(mesh);
    VertexAdjacency adj = vertex_adjacency(mesh);
    ForwardMap map{model, build_protocol(ProtocolKind::AdjacentAdjacent, 8, 8, 8)};
};

Small& small()
{
    static Small s;
    return s;
}

std::vector<ExperimentSample> make_samples(const Small& s, int count)
{
    std::vector<ExperimentSample> out;
    const Vector ones = Vector::Ones(s.mesh.vertex_count());
    for (int k = 0; k < count; ++k) {
        ExperimentSample e;
        e.id = 10 - k; // reverse order to exercise sorting
        e.truth = rasterize(s.mesh, {{Point(0.45 - 0.3 * k, 0.1 * k), 0.3, 1.8}}, 1.0);
        e.data = s.map.apply(e.truth);
        e.mask = ideal_oracle(e.truth, ones, 1e-6, 0, s.adj);
        e.reference_mask = e.mask;
        e.seeds = {{"phantom", k}};
        out.push_back(std::move(e));
    }
    return out;
}

std::filesystem::path temp_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("eitcs_exp_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("table CSV round trip keeps every cell and the metadata sidecar")
{
    Table t;
    t.header = {"a", "b", "note"};
    t.add_row({format_number(0.1), format_number(-1e-300), "plain"});
    t.add_row({format_number(1.0 / 3.0), "inf", "has,comma and \"quote\""});
    t.metadata = {{"seed", 7}, {"lambda", 1e-4}};
    const auto dir = temp_dir("table");
    write_table(t, dir / "t.csv");
    CHECK(std::filesystem::exists(dir / "t.meta.json"));
    const Table back = read_table(dir / "t.csv");
    CHECK(back.header == t.header);
    CHECK(back.rows == t.rows);
    CHECK(back.metadata == t.metadata);
    CHECK(back.number(0, "a") == 0.1);
    CHECK(back.number(1, "a") == 1.0 / 3.0);
    CHECK_THROWS_AS(back.number(0, "note"), InputError);
    CHECK_THROWS_AS(back.column("missing"), InputError);
    CHECK_THROWS_AS(t.add_row({"1"}), InputError);
    CHECK_THROWS_AS(Table::from_csv("a,b\n1\n"), FormatError);
}

TEST_CASE("least-squares line recovers an exact line and rejects degenerate input")
{
    const auto fit = least_squares_line({0, 1, 2, 3}, {1, 3, 5, 7});
    CHECK(fit.slope == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(fit.intercept == doctest::Approx(1.0).epsilon(1e-14));
    CHECK_THROWS_AS(least_squares_line({1, 1}, {0, 1}), InputError);
    CHECK_THROWS_AS(least_squares_line({1}, {0}), InputError);
}

TEST_CASE("m* interpolation is linear in log m between bracketing points")
{
    // Halfway in rel_err between 16 and 64 is the geometric mean 32.
    auto m = interpolate_m_star({16, 64, 256}, {0.02, 0.0, 0.0}, 0.01);
    REQUIRE(m);
    CHECK(*m == doctest::Approx(32.0).epsilon(1e-12));
    // A quarter of the way from 64 to 256: 64 * 4^0.25.
    m = interpolate_m_star({16, 64, 256}, {0.5, 0.05, 0.01}, 0.04);
    REQUIRE(m);
    CHECK(*m == doctest::Approx(64.0 * std::pow(4.0, 0.25)).epsilon(1e-12));
    m = interpolate_m_star({16, 64}, {1e-4, 1e-5}, 1e-3);
    REQUIRE(m);
    CHECK(*m == 16.0);
    CHECK_FALSE(interpolate_m_star({16, 64}, {0.1, 0.01}, 1e-3));
}

TEST_CASE("SVG embeds the table exactly; empty input gives axes only")
{
    Table t;
    t.header = {"m", "rel_err", "sample"};
    t.add_row({"16", format_number(0.123456789012345678), "a--b & c"});
    t.add_row({"64", format_number(1e-7), "a--b & c"});
    t.add_row({"256", "not reached", "x---y"});
    PlotSpec spec;
    spec.kind = PlotKind::LogLog;
    spec.x = "m";
    spec.y = "rel_err";
    spec.series = "sample";
    spec.reference_y = 1e-3;
    const std::string svg = render_plot(t, spec);
    CHECK(svg.find("<svg") != std::string::npos);
    // The comment body must not contain "--" (XML rule).
    const auto body_start = svg.find("<!-- eitcs-csv") + 4;
    CHECK(svg.substr(body_start, svg.find("-->") - body_start).find("--") == std::string::npos);
    const Table back = table_from_svg(svg);
    CHECK(back.header == t.header);
    CHECK(back.rows == t.rows);
    CHECK(svg.find("class=\"series\"") != std::string::npos);
    CHECK(svg.find("class=\"reference\"") != std::string::npos);

    Table empty;
    empty.header = {"m", "rel_err"};
    spec.series.clear();
    const std::string axes = render_plot(empty, spec);
    CHECK(axes.find("<svg") != std::string::npos);
    CHECK(axes.find("class=\"series\"") == std::string::npos);
    CHECK(table_from_svg(axes).rows.empty());

    const auto dir = temp_dir("plot");
    emit_plot(t, spec, dir / "p.svg");
    std::ifstream in(dir / "p.svg");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(table_from_svg(text).rows == t.rows);
    CHECK_THROWS_AS(table_from_svg("<svg/>"), FormatError);
    CHECK(parse_plot_kind("loglog") == PlotKind::LogLog);
    CHECK_THROWS_AS(parse_plot_kind("bar"), InputError);
}

TEST_CASE("log-log annotation matches the fit recomputed from the plotted data")
{
    Table t;
    t.header = {"delta", "error"};
    for (double d : {1e-4, 1e-3, 1e-2})
        t.add_row({format_number(d), format_number(3.0 * std::sqrt(d))});
    std::vector<double> x, y;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        x.push_back(std::log(t.number(r, "delta")));
        y.push_back(std::log(t.number(r, "error")));
    }
    const auto fit = least_squares_line(x, y);
    CHECK(fit.slope == doctest::Approx(0.5).epsilon(1e-12));
    PlotSpec spec{PlotKind::LogLog, "delta", "error", "", "rate", "", "", "slope " + format_number(fit.slope), {}};
    const Table back = table_from_svg(render_plot(t, spec));
    std::vector<double> bx, by;
    for (std::size_t r = 0; r < back.rows.size(); ++r) {
        bx.push_back(std::log(back.number(r, "delta")));
        by.push_back(std::log(back.number(r, "error")));
    }
    CHECK(least_squares_line(bx, by).slope == fit.slope);
}

TEST_CASE("compare_variants runs every variant per sample, sorted by sample")
{
    const auto& s = small();
    const auto samples = make_samples(s, 2);
    CompareOptions opt;
    for (Variant v : kAllVariants)
        opt.lambda[v] = 1e-7;
    opt.base.max_iters = 60;
    const auto res = compare_variants(s.map, s.adj, samples, opt);
    REQUIRE(res.table.rows.size() == 8);
    CHECK(res.table.cell(0, "sample") == "9");
    CHECK(res.table.cell(4, "sample") == "10");
    for (std::size_t r = 0; r < res.table.rows.size(); ++r) {
        const Variant v = parse_variant(res.table.cell(r, "variant"));
        CHECK(v == kAllVariants[r % 4]);
        if (uses_mask(v))
            CHECK(res.table.number(r, "fn") == 0.0);
        else
            CHECK(res.table.cell(r, "fn").empty());
        CHECK(std::isfinite(res.table.number(r, "psnr")));
    }
    CHECK(res.mean_psnr.size() == 4);
    CHECK(res.table.metadata.at("mesh_digest") == s.model->mesh_digest());
    CHECK(res.table.metadata.at("samples").size() == 2);

    CompareOptions missing = opt;
    missing.lambda.erase(Variant::TV);
    CHECK_THROWS_AS(compare_variants(s.map, s.adj, samples, missing), InputError);
}

TEST_CASE("masked reconstruction with an ideal mask is exact off the support")
{
    const auto& s = small();
    const auto samples = make_samples(s, 1);
    SolverConfig cfg;
    cfg.variant = Variant::TVMask;
    cfg.lambda = 1e-7;
    cfg.max_iters = 40;
    cfg.regularizer.sigma0 = Vector::Ones(s.mesh.vertex_count());
    cfg.regularizer.mask = samples[0].mask;
    const auto rep = run_pgm(s.map, s.adj, cfg.regularizer.sigma0, samples[0].data, cfg);
    for (int i = 0; i < s.mesh.vertex_count(); ++i)
        if (!samples[0].mask.active(i))
            CHECK(rep.sigma[i] - samples[0].truth.values[i] == 0.0);
}

TEST_CASE("lambda grid search: singleton grid, determinism, over-smoothing loses")
{
    const auto& s = small();
    const auto samples = make_samples(s, 2);
    SolverConfig base;
    base.variant = Variant::TVMask;
    base.max_iters = 80;
    const auto single = lambda_grid_search(s.map, s.adj, samples, {3e-6}, base);
    CHECK(single.best_lambda == 3e-6);
    CHECK(single.table.rows.size() == 1);

    const auto a = lambda_grid_search(s.map, s.adj, samples, {1e-8, 1e-6}, base);
    const auto b = lambda_grid_search(s.map, s.adj, samples, {1e-8, 1e-6}, base);
    CHECK(a.best_lambda == b.best_lambda);
    CHECK(a.table.rows == b.table.rows);

    // Noise-free data: a hundredfold larger lambda only adds bias.
    const auto over = lambda_grid_search(s.map, s.adj, samples, {1e-6, 1e-4}, base);
    CHECK(over.best_lambda == 1e-6);
    CHECK_THROWS_AS(lambda_grid_search(s.map, s.adj, samples, {}, base), InputError);
}

TEST_CASE("rate study: fixed noise direction, error monotone in delta, slope from the table")
{
    const auto& s = small();
    const auto samples = make_samples(s, 1);
    RateOptions opt;
    opt.C = 1e-3;
    opt.deltas = {1e-2, 1e-4, 1e-3};
    opt.base.variant = Variant::TVMask;
    opt.base.max_iters = 5000;
    opt.base.tol = 1e-10;
    opt.base.regularizer.mask = samples[0].mask;
    const auto res = convergence_rate_study(s.map, s.adj, samples[0].truth, opt);
    REQUIRE(res.table.rows.size() == 3);
    std::vector<double> x, y;
    for (std::size_t r = 0; r < 3; ++r) {
        const double d = res.table.number(r, "delta");
        CHECK(res.table.number(r, "lambda") == doctest::Approx(1e-3 * d).epsilon(1e-15));
        x.push_back(std::log(d));
        y.push_back(std::log(res.table.number(r, "error")));
        if (r > 0) {
            CHECK(d > res.table.number(r - 1, "delta"));
            CHECK(res.table.number(r, "error") >= res.table.number(r - 1, "error"));
            // Same Gaussian direction: realized noise norms scale with delta.
            CHECK(res.table.number(r, "noise_norm") / d ==
                doctest::Approx(res.table.number(0, "noise_norm") / res.table.number(0, "delta")).epsilon(1e-12));
        }
    }
    CHECK(least_squares_line(x, y).slope == doctest::Approx(res.fit.slope).epsilon(1e-12));
    CHECK(res.table.metadata.at("slope") == res.fit.slope);

    RateOptions narrow = opt;
    narrow.deltas = {1e-3, 3e-3};
    CHECK_THROWS_AS(convergence_rate_study(s.map, s.adj, samples[0].truth, narrow), InputError);
    RateOptions unmasked = opt;
    unmasked.base.regularizer.mask.reset();
    CHECK_THROWS_AS(convergence_rate_study(s.map, s.adj, samples[0].truth, unmasked), InputError);
}

TEST_CASE("cs sweep yields one row per (sample, m) and a curve point per sample")
{
    const auto& s = small();
    const auto samples = single_inclusion_samples(s.mesh, {0.25, 0.35}, Point(0.4, 0.0), 1.8, 1.0);
    REQUIRE(samples.size() == 2);
    CHECK(gradient_sparsity(samples[0].truth.values, s.adj) < gradient_sparsity(samples[1].truth.values, s.adj));
    CsOptions opt;
    opt.kind = ProtocolKind::AdjacentAdjacent;
    opt.m_list = {16, 4};
    opt.threshold = 1e-12;
    opt.base.lambda = 1e-9;
    opt.base.max_iters = 30;
    const auto res = cs_sweep(s.model, s.adj, samples, opt);
    REQUIRE(res.rows.size() == 4);
    CHECK(res.rows[0].m == 4);
    CHECK(res.rows[1].m == 16);
    CHECK(res.rows[2].sample == 1);
    REQUIRE(res.curve.size() == 2);
    const Table curve = res.curve_table();
    for (std::size_t r = 0; r < curve.rows.size(); ++r)
        if (!res.curve[r].m_star)
            CHECK(curve.cell(r, "m_star") == "not reached");
    CHECK(res.table().rows.size() == 4);
    CHECK(res.metadata.at("threshold") == 1e-12);

    CsOptions bad = opt;
    bad.m_list = {15};
    CHECK_THROWS_AS(cs_sweep(s.model, s.adj, samples, bad), InputError);
    bad.m_list = {100};
    CHECK_THROWS_AS(cs_sweep(s.model, s.adj, samples, bad), InputError);
}

TEST_CASE("dataset samples carry reference masks and seeds")
{
    const Small& s = small();
    const auto dir = temp_dir("dataset");
    DatasetConfig cfg;
    cfg.samples = 3;
    cfg.seed = 5;
    cfg.noise_level = 1e-3;
    cfg.dilation_hops = 1;
    generate_dataset(s.mesh, s.map.protocol(), cfg, {}, dir);
    const auto loaded = load_dataset(dir);
    const auto samples = dataset_samples(dir, loaded, {}, true);
    REQUIRE(samples.size() == 3);
    for (const auto& e : samples) {
        CHECK(e.reference_mask.subset_of(e.mask));
        CHECK(fn_rate(e.mask, e.reference_mask) == 0.0);
        CHECK(e.seeds.at("dataset") == 5);
    }
    CHECK_THROWS_AS(dataset_samples(dir, loaded, {7}, false), InputError);
}
