#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eitcs/common.hpp"
#include "eitcs/mesh.hpp"

namespace eitcs {

enum class MaskProvenance { Ideal, File, Thresholded };

std::string to_string(MaskProvenance p);
MaskProvenance parse_provenance(const std::string& s);

// Binary support indicator M_O over mesh vertices.
struct OracleMask {
    static constexpr int kFormatVersion = 1;

    std::vector<std::uint8_t> bits;
    std::string mesh_digest;
    MaskProvenance provenance = MaskProvenance::Ideal;
    std::optional<double> sigma_th;

    int size() const { return static_cast<int>(bits.size()); }
    int count() const;
    bool active(int i) const { return bits[static_cast<std::size_t>(i)] != 0; }
    std::vector<int> active_indices() const;
    // True when every active bit of this mask is also active in `other`.
    bool subset_of(const OracleMask& other) const;

    static OracleMask filled(int n, bool value, std::string digest = {});
};

// Support tolerance used for phantoms on the box [lower, upper].
double default_support_tolerance(const Box& box);

// bits_i = 1 iff |truth_i - sigma0_i| > tol, then grown by `dilation_hops`
// graph steps.
OracleMask ideal_oracle(const ConductivityField& truth, const Vector& sigma0, double tol, int dilation_hops,
    const VertexAdjacency& adj);

OracleMask threshold_probabilities(const Vector& probs, double sigma_th, std::string mesh_digest = {});

// Percentage of all vertices that are active in `truth` but not in `predicted`.
double fn_rate(const OracleMask& predicted, const OracleMask& truth);

// Throws InputError when both digests are set and differ.
void check_same_mesh(const std::string& a, const std::string& b, const char* what);

nlohmann::json mask_to_json(const OracleMask& mask);
// `expected_digest`, when non-empty, must equal the stored digest.
OracleMask mask_from_json(const nlohmann::json& j, const std::string& expected_digest = {});
void write_mask(const OracleMask& mask, const std::filesystem::path& path);
OracleMask read_mask(const std::filesystem::path& path, const std::string& expected_digest = {});

} // namespace eitcs
