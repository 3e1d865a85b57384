#include "eitcs/oracle.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

namespace eitcs {

std::string to_string(MaskProvenance p)
{
    switch (p) {
    case MaskProvenance::Ideal:
        return "ideal";
    case MaskProvenance::File:
        return "file";
    case MaskProvenance::Thresholded:
        return "thresholded";
    }
    return "ideal";
}

MaskProvenance parse_provenance(const std::string& s)
{
    if (s == "ideal")
        return MaskProvenance::Ideal;
    if (s == "file")
        return MaskProvenance::File;
    if (s == "thresholded")
        return MaskProvenance::Thresholded;
    throw InputError("unknown mask provenance '" + s + "'");
}

int OracleMask::count() const
{
    return static_cast<int>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

std::vector<int> OracleMask::active_indices() const
{
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
        if (active(i))
            out.push_back(i);
    return out;
}

bool OracleMask::subset_of(const OracleMask& other) const
{
    if (other.size() != size())
        throw InputError("mask lengths differ");
    for (int i = 0; i < size(); ++i)
        if (active(i) && !other.active(i))
            return false;
    return true;
}

OracleMask OracleMask::filled(int n, bool value, std::string digest)
{
    OracleMask m;
    m.bits.assign(static_cast<std::size_t>(n), value ? 1 : 0);
    m.mesh_digest = std::move(digest);
    return m;
}

double default_support_tolerance(const Box& box)
{
    return 1e-6 * (box.upper - box.lower);
}

void check_same_mesh(const std::string& a, const std::string& b, const char* what)
{
    if (!a.empty() && !b.empty() && a != b)
        throw InputError(std::string(what) + ": mesh digest mismatch");
}

OracleMask ideal_oracle(const ConductivityField& truth, const Vector& sigma0, double tol, int dilation_hops,
    const VertexAdjacency& adj)
{
    if (!(tol > 0.0))
        throw InputError("support tolerance must be positive");
    if (dilation_hops < 0)
        throw InputError("dilation hops must be non-negative");
    const int n = static_cast<int>(truth.size());
    if (sigma0.size() != n || adj.vertex_count() != n)
        throw InputError("ideal oracle inputs have inconsistent lengths");

    OracleMask mask = OracleMask::filled(n, false, truth.mesh_digest);
    mask.provenance = MaskProvenance::Ideal;
    for (int i = 0; i < n; ++i)
        if (std::abs(truth.values[i] - sigma0[i]) > tol)
            mask.bits[i] = 1;
    for (int hop = 0; hop < dilation_hops; ++hop) {
        auto grown = mask.bits;
        for (int i = 0; i < n; ++i)
            if (mask.bits[i])
                for (int k : adj.neighbors[i])
                    grown[k] = 1;
        mask.bits = std::move(grown);
    }
    return mask;
}

OracleMask threshold_probabilities(const Vector& probs, double sigma_th, std::string mesh_digest)
{
    if (probs.size() > 0 && !(probs.minCoeff() >= 0.0 && probs.maxCoeff() <= 1.0))
        throw InputError("probabilities must lie in [0, 1]");
    OracleMask mask = OracleMask::filled(static_cast<int>(probs.size()), false, std::move(mesh_digest));
    mask.provenance = MaskProvenance::Thresholded;
    mask.sigma_th = sigma_th;
    for (Eigen::Index i = 0; i < probs.size(); ++i)
        mask.bits[i] = probs[i] >= sigma_th ? 1 : 0;
    return mask;
}

double fn_rate(const OracleMask& predicted, const OracleMask& truth)
{
    check_same_mesh(predicted.mesh_digest, truth.mesh_digest, "fn_rate");
    if (predicted.size() != truth.size())
        throw InputError("fn_rate: mask lengths differ");
    if (truth.size() == 0)
        return 0.0;
    int missed = 0;
    for (int i = 0; i < truth.size(); ++i)
        if (truth.active(i) && !predicted.active(i))
            ++missed;
    return 100.0 * missed / truth.size();
}

nlohmann::json mask_to_json(const OracleMask& mask)
{
    nlohmann::json j = {
        {"version", OracleMask::kFormatVersion},
        {"mesh_digest", mask.mesh_digest},
        {"provenance", to_string(mask.provenance)},
        {"bits", mask.bits},
    };
    j["sigma_th"] = mask.sigma_th ? nlohmann::json(*mask.sigma_th) : nlohmann::json(nullptr);
    return j;
}

namespace {

bool is_hex_digest(const std::string& s)
{
    return s.size() == 64
        && std::all_of(s.begin(), s.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)) != 0; });
}

} // namespace

OracleMask mask_from_json(const nlohmann::json& j, const std::string& expected_digest)
{
    try {
        if (j.at("version").get<int>() != OracleMask::kFormatVersion)
            throw FormatError("unsupported mask version");
        OracleMask mask;
        mask.mesh_digest = j.at("mesh_digest").get<std::string>();
        if (!mask.mesh_digest.empty() && !is_hex_digest(mask.mesh_digest))
            throw FormatError("mask digest is not a SHA-256 hex string");
        if (!expected_digest.empty() && mask.mesh_digest != expected_digest)
            throw FormatError("mask digest does not match the mesh");
        mask.provenance = parse_provenance(j.at("provenance").get<std::string>());
        if (j.contains("sigma_th") && !j.at("sigma_th").is_null())
            mask.sigma_th = j.at("sigma_th").get<double>();
        for (const auto& b : j.at("bits")) {
            const int v = b.get<int>();
            if (v != 0 && v != 1)
                throw FormatError("mask bits must be 0 or 1");
            mask.bits.push_back(static_cast<std::uint8_t>(v));
        }
        return mask;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed mask JSON: ") + e.what());
    } catch (const InputError& e) {
        throw FormatError(std::string("invalid mask: ") + e.what());
    }
}

void write_mask(const OracleMask& mask, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << mask_to_json(mask).dump() << '\n';
}

OracleMask read_mask(const std::filesystem::path& path, const std::string& expected_digest)
{
    std::ifstream in(path);
    if (!in)
        throw FormatError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed mask JSON in " + path.string() + ": " + e.what());
    }
    return mask_from_json(j, expected_digest);
}

} // namespace eitcs
