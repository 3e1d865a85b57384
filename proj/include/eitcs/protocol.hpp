#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eitcs/common.hpp"
#include "eitcs/mesh.hpp"

namespace eitcs {

enum class ProtocolKind { AdjacentAdjacent, OppositeAdjacent };

// Which (injection, measurement) combinations are dropped.
enum class SkipRule {
    None,                // keep all n_c * n_v readings
    InjectingPair,       // drop the measurement on the injecting pair itself
    InjectingElectrodes, // drop measurements touching either injecting electrode
};

std::string to_string(ProtocolKind kind);
std::string to_string(SkipRule rule);
ProtocolKind parse_protocol_kind(const std::string& s);
SkipRule parse_skip_rule(const std::string& s);

// Current (source -> sink) or voltage (high - low) electrode pair.
struct ElectrodePair {
    int first = 0;
    int second = 0;
    auto operator<=>(const ElectrodePair&) const = default;
};

// One scalar measurement: voltage pair `measurement` under drive `injection`.
struct Reading {
    int injection = 0;
    int measurement = 0;
};

struct Protocol {
    ProtocolKind kind = ProtocolKind::OppositeAdjacent;
    int electrodes = 0;
    std::vector<ElectrodePair> injections;
    std::vector<ElectrodePair> measurements;
    SkipRule skip = SkipRule::None;
    // Row order of the measurement vector: injection-major.
    std::vector<Reading> readings;
    // Set when n_c or n_v does not divide p and the stride was rounded.
    bool nonuniform_stride = false;

    int size() const { return static_cast<int>(readings.size()); }
    void validate() const;
};

Protocol build_protocol(ProtocolKind kind, int electrodes, int n_injections, int n_measurements,
    SkipRule skip = SkipRule::None);

// Rebuilds `readings` from injections, measurements and skip rule.
void expand_readings(Protocol& protocol);

nlohmann::json protocol_to_json(const Protocol& protocol);
Protocol protocol_from_json(const nlohmann::json& j);
void write_protocol(const Protocol& protocol, const std::filesystem::path& path);
Protocol read_protocol(const std::filesystem::path& path);

// Clean data, its noisy version and the noise record.
struct MeasurementFrame {
    Protocol protocol;
    Vector clean;
    Vector noisy;
    Vector eta;
    double delta = 0.0; // realized ||eta||_2
    double noise_level = 0.0;
    std::uint64_t seed = 0;
};

struct NoiseDraw {
    Vector noisy;
    Vector eta;
    double snr_db = kInfinity;
};

// eta_r = level * ||clean|| * g_r / sqrt(m), g_r iid standard normal, so that
// E||eta|| ~ level * ||clean||. SNR is +inf when eta vanishes.
NoiseDraw add_noise(const Vector& clean, double level, std::uint64_t seed);

double snr_db(const Vector& clean, const Vector& eta);

// n x m matrix with entry (i, r) = data_r / (d_V^i + d_I^i), where d_V and
// d_I are distances from vertex i to the boundary midpoints of the measuring
// and injecting electrode pairs of reading r.
Matrix oracle_feature_weights(const Mesh& mesh, const Protocol& protocol, const Vector& data);

// Boundary point halfway along the counterclockwise arc between the centers
// of the two electrodes.
Point pair_midpoint(const Mesh& mesh, const ElectrodePair& pair);

} // namespace eitcs
