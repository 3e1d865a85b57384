#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eitcs/cem.hpp"
#include "eitcs/common.hpp"
#include "eitcs/mesh.hpp"
#include "eitcs/oracle.hpp"
#include "eitcs/protocol.hpp"

namespace eitcs {

struct PhantomConfig {
    int min_inclusions = 1;
    int max_inclusions = 4;
    double min_radius = 0.15;
    double max_radius = 0.25;
    double min_value = 0.2;
    double max_value = 2.0;
    double background = 1.0;
    // Every inclusion disk lies inside this radius.
    double placement_radius = 0.75;
    int max_attempts = 1000;
    // Overrides the sampled inclusion count (0 gives the background).
    std::optional<int> forced_count;

    void validate(const Box& box) const;
    nlohmann::json to_json() const;
    static PhantomConfig from_json(const nlohmann::json& j);
};

struct Inclusion {
    Point center;
    double radius = 0.0;
    double value = 0.0;
};

struct Phantom {
    ConductivityField field;
    std::vector<Inclusion> inclusions;
};

// Vertices within an inclusion disk take its value; others the background.
ConductivityField rasterize(const Mesh& mesh, const std::vector<Inclusion>& inclusions, double background,
    const Box& box = {});

// Disjoint random disks, rejection-sampled; deterministic per seed.
Phantom generate_phantom(const Mesh& mesh, const PhantomConfig& config, std::uint64_t seed, const Box& box = {});

// Number of unordered adjacent pairs whose values differ by more than tol.
int gradient_sparsity(const Vector& sigma, const VertexAdjacency& adj, double tol = 1e-9);

// 10 log10(peak^2 / MSE); +inf for identical fields.
double psnr(const Vector& reconstruction, const Vector& truth, double peak);
// Peak convention max(truth).
double psnr(const Vector& reconstruction, const Vector& truth);
// ||reconstruction - truth|| / ||truth||.
double rel_err(const Vector& reconstruction, const Vector& truth);

// Binary array format: "EITB", u32 version, u64 length, little-endian f64.
void write_array(const Vector& values, const std::filesystem::path& path);
Vector read_array(const std::filesystem::path& path);
// CSV with header "vertex_index,value".
void write_array_csv(const Vector& values, const std::filesystem::path& path);

struct DatasetConfig {
    int samples = 10;
    std::uint64_t seed = 1;
    double noise_level = 0.0;
    int dilation_hops = 0;
    PhantomConfig phantom;
    Box box;
    double train_fraction = 0.70;
    double validation_fraction = 0.15;
};

struct DatasetSample {
    int id = 0;
    std::string sigma_file;
    std::string clean_file;
    std::string noisy_file;
    std::string mask_file;
    std::uint64_t phantom_seed = 0;
    std::uint64_t noise_seed = 0;
    double noise_level = 0.0;
    double delta = 0.0;
    double snr_db = kInfinity;
    std::vector<Inclusion> inclusions;
};

struct DatasetManifest {
    static constexpr int kFormatVersion = 1;

    std::string mesh_file = "mesh.json";
    std::string mesh_digest;
    std::string protocol_file = "protocol.json";
    int vertices = 0;
    int measurements = 0;
    CemOptions forward;
    DatasetConfig config;
    std::vector<DatasetSample> samples;
    std::vector<int> train;
    std::vector<int> validation;
    std::vector<int> test;

    nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json& j);
};

// Writes manifest.json, mesh.json, protocol.json, samples/NNNN.{sigma,clean,noisy}.eitb
// and masks/NNNN.json under `dir`.
DatasetManifest generate_dataset(const Mesh& mesh, const Protocol& protocol, const DatasetConfig& config,
    const CemOptions& forward, const std::filesystem::path& dir);

struct LoadedDataset {
    DatasetManifest manifest;
    Mesh mesh;
    Protocol protocol;
};

// Reads and checks referential integrity (files exist, digests and lengths agree).
LoadedDataset load_dataset(const std::filesystem::path& dir);

struct SampleData {
    ConductivityField truth;
    Vector clean;
    Vector noisy;
    OracleMask mask;
};

SampleData load_sample(const std::filesystem::path& dir, const LoadedDataset& dataset, int index);

std::string sample_stem(int id);

} // namespace eitcs
