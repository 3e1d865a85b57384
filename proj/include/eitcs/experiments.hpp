#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eitcs/cem.hpp"
#include "eitcs/oracle.hpp"
#include "eitcs/pgm.hpp"
#include "eitcs/phantom.hpp"

namespace eitcs {

// CSV table with a fixed header. Numbers are stored as "%.17g" text so that
// writing and re-reading is lossless. Metadata travels in a sidecar
// "<stem>.meta.json" next to the CSV.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    nlohmann::json metadata = nlohmann::json::object();

    int column(const std::string& name) const; // throws InputError when absent
    double number(std::size_t row, const std::string& name) const;
    const std::string& cell(std::size_t row, const std::string& name) const;
    void add_row(std::vector<std::string> row);

    std::string to_csv() const;
    static Table from_csv(const std::string& text);
};

std::string format_number(double v);
std::filesystem::path metadata_path(const std::filesystem::path& csv_path);
void write_table(const Table& table, const std::filesystem::path& path);
// Reads the CSV and, when present, its metadata sidecar.
Table read_table(const std::filesystem::path& path);

// Ordinary least-squares line y = slope * x + intercept.
struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
};
LineFit least_squares_line(const std::vector<double>& x, const std::vector<double>& y);

// Reconstruction input: truth, data to invert and the mask handed to masked
// variants. `reference_mask` is the exact support used to score FN.
struct ExperimentSample {
    int id = 0;
    ConductivityField truth;
    Vector data;
    OracleMask mask;
    OracleMask reference_mask;
    nlohmann::json seeds = nlohmann::json::object();
};

// Samples `indices` of a dataset (all when empty); `noisy` picks the data file.
std::vector<ExperimentSample> dataset_samples(const std::filesystem::path& dir, const LoadedDataset& dataset,
    const std::vector<int>& indices, bool noisy);

struct CompareOptions {
    std::vector<Variant> variants{std::begin(kAllVariants), std::end(kAllVariants)};
    std::map<Variant, double> lambda;
    // Variant and lambda are overwritten per run; sigma0, box and the rest apply to all.
    SolverConfig base;
    double noise_level = 0.0;
};

struct CompareResult {
    // sample,variant,lambda,psnr,rel_err,fn,mask_size,iterations,termination,objective,mu
    Table table;
    std::map<Variant, double> mean_psnr;
    std::map<Variant, double> mean_rel_err;
};

// Every variant on every sample, rows sorted by sample then variant order.
// The fn cell is empty for unmasked variants.
CompareResult compare_variants(const ForwardMap& map, const VertexAdjacency& adj,
    const std::vector<ExperimentSample>& samples, const CompareOptions& options);

struct RateOptions {
    double C = 1e-3;
    std::vector<double> deltas{1e-4, 3e-4, 1e-3, 3e-3, 1e-2};
    std::uint64_t noise_seed = 1;
    // Variant, sigma0, box and the mask (for masked variants); lambda is set per delta.
    SolverConfig base;
};

struct RateResult {
    // delta,lambda,noise_norm,error,rel_err,iterations,termination
    Table table;
    LineFit fit; // log(error) against log(delta)
};

// Noise of relative level delta along one fixed Gaussian direction, lambda = C delta.
RateResult convergence_rate_study(const ForwardMap& map, const VertexAdjacency& adj, const ConductivityField& truth,
    const RateOptions& options);

struct SweepRow {
    int sample = 0;
    int s = 0;
    int m = 0;
    double rel_err = 0.0;
    double psnr = 0.0;
    int iterations = 0;
    std::string termination;
    double wall_time = 0.0;
};

struct SweepPoint {
    int sample = 0;
    int s = 0;
    std::optional<double> m_star; // empty when the threshold is never reached
};

struct SweepResult {
    std::vector<SweepRow> rows; // sorted by sample, then m
    std::vector<SweepPoint> curve;
    nlohmann::json metadata = nlohmann::json::object();

    // sample,s,m,rel_err,psnr,iterations,termination,wall_time
    Table table() const;
    // sample,s,m_star ("not reached" when absent)
    Table curve_table() const;
};

struct CsSample {
    int id = 0;
    ConductivityField truth;
    OracleMask mask;
};

struct CsOptions {
    ProtocolKind kind = ProtocolKind::OppositeAdjacent;
    SkipRule skip = SkipRule::None;
    // Each m must be a square k^2 with k <= p; the protocol uses k drives and k readings.
    std::vector<int> m_list{16, 64, 256, 1024};
    double threshold = 1e-3;
    SolverConfig base; // variant defaults to TV with mask
    CsOptions() { base.variant = Variant::TVMask; }
};

// Single centred-offset inclusions of the given radii, with ideal masks.
std::vector<CsSample> single_inclusion_samples(const Mesh& mesh, const std::vector<double>& radii, const Point& center,
    double value, double background, const Box& box = {});

// Smallest m reaching rel_err <= threshold, interpolated linearly in log m
// between the bracketing points; empty when never reached.
std::optional<double> interpolate_m_star(const std::vector<int>& m, const std::vector<double>& rel_err,
    double threshold);

// Noise-free reconstructions for every (sample, m) cell.
SweepResult cs_sweep(std::shared_ptr<const CemModel> model, const VertexAdjacency& adj,
    const std::vector<CsSample>& samples, const CsOptions& options);

struct GridResult {
    double best_lambda = 0.0;
    // lambda,mean_psnr,min_psnr,max_psnr,mean_rel_err,mean_iterations
    Table table;
};

// Lambda with the largest mean PSNR; ties go to the earlier grid entry.
GridResult lambda_grid_search(const ForwardMap& map, const VertexAdjacency& adj,
    const std::vector<ExperimentSample>& samples, const std::vector<double>& grid, const SolverConfig& base);

enum class PlotKind { Line, LogLog };
std::string to_string(PlotKind kind);
PlotKind parse_plot_kind(const std::string& s);

struct PlotSpec {
    PlotKind kind = PlotKind::Line;
    std::string x;
    std::string y;
    // Column splitting rows into series; empty draws a single series.
    std::string series;
    std::string title;
    std::string x_label;
    std::string y_label;
    // Free text placed under the title, e.g. a fitted slope.
    std::string annotation;
    // Optional horizontal reference line (e.g. an error threshold).
    std::optional<double> reference_y;
};

// Standalone SVG with axes, ticks and a legend. The full CSV is embedded in
// a comment so that the plotted data can be recovered exactly. Rows with
// non-numeric cells (or nonpositive ones on log axes) are skipped.
std::string render_plot(const Table& table, const PlotSpec& spec);
void emit_plot(const Table& table, const PlotSpec& spec, const std::filesystem::path& path);
// Table embedded in an SVG written by emit_plot / render_plot.
Table table_from_svg(const std::string& svg);

} // namespace eitcs
