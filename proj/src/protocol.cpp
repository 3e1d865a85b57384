#include "eitcs/protocol.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "eitcs/rng.hpp"

namespace eitcs {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// n indices spread uniformly over [0, p); exact when n divides p.
std::vector<int> strided(int p, int n)
{
    std::vector<int> idx(n);
    for (int j = 0; j < n; ++j)
        idx[j] = static_cast<int>(std::floor(static_cast<double>(j) * p / n + 0.5)) % p;
    return idx;
}

bool same_pair(const ElectrodePair& a, const ElectrodePair& b)
{
    return (a.first == b.first && a.second == b.second) || (a.first == b.second && a.second == b.first);
}

bool touches(const ElectrodePair& meas, const ElectrodePair& inj)
{
    return meas.first == inj.first || meas.first == inj.second || meas.second == inj.first
        || meas.second == inj.second;
}

} // namespace

std::string to_string(ProtocolKind kind)
{
    return kind == ProtocolKind::AdjacentAdjacent ? "adjacent-adjacent" : "opposite-adjacent";
}

std::string to_string(SkipRule rule)
{
    switch (rule) {
    case SkipRule::None:
        return "none";
    case SkipRule::InjectingPair:
        return "injecting-pair";
    case SkipRule::InjectingElectrodes:
        return "injecting-electrodes";
    }
    return "none";
}

ProtocolKind parse_protocol_kind(const std::string& s)
{
    if (s == "adjacent-adjacent" || s == "adjacent")
        return ProtocolKind::AdjacentAdjacent;
    if (s == "opposite-adjacent" || s == "opposite")
        return ProtocolKind::OppositeAdjacent;
    throw InputError("unknown protocol kind '" + s + "'");
}

SkipRule parse_skip_rule(const std::string& s)
{
    if (s == "none")
        return SkipRule::None;
    if (s == "injecting-pair")
        return SkipRule::InjectingPair;
    if (s == "injecting-electrodes")
        return SkipRule::InjectingElectrodes;
    throw InputError("unknown skip rule '" + s + "'");
}

void Protocol::validate() const
{
    if (electrodes < 2)
        throw InputError("protocol needs at least two electrodes");
    auto check = [&](const ElectrodePair& pr, const char* what) {
        if (pr.first < 0 || pr.first >= electrodes || pr.second < 0 || pr.second >= electrodes)
            throw InputError(std::string(what) + " electrode index out of range");
        if (pr.first == pr.second)
            throw InputError(std::string(what) + " pair uses the same electrode twice");
    };
    for (const auto& pr : injections)
        check(pr, "injection");
    for (const auto& pr : measurements)
        check(pr, "measurement");
    for (const auto& r : readings)
        if (r.injection < 0 || r.injection >= static_cast<int>(injections.size()) || r.measurement < 0
            || r.measurement >= static_cast<int>(measurements.size()))
            throw InputError("reading references an unknown pattern");
    if (skip == SkipRule::None && readings.size() != injections.size() * measurements.size())
        throw InputError("reading count differs from injections x measurements");
}

void expand_readings(Protocol& protocol)
{
    protocol.readings.clear();
    for (int a = 0; a < static_cast<int>(protocol.injections.size()); ++a) {
        for (int b = 0; b < static_cast<int>(protocol.measurements.size()); ++b) {
            const auto& inj = protocol.injections[a];
            const auto& meas = protocol.measurements[b];
            if (protocol.skip == SkipRule::InjectingPair && same_pair(meas, inj))
                continue;
            if (protocol.skip == SkipRule::InjectingElectrodes && touches(meas, inj))
                continue;
            protocol.readings.push_back({a, b});
        }
    }
}

Protocol build_protocol(ProtocolKind kind, int electrodes, int n_injections, int n_measurements, SkipRule skip)
{
    const int p = electrodes;
    if (p < 2)
        throw InputError("protocol needs at least two electrodes");
    if (n_injections < 1 || n_injections > p)
        throw InputError("injection count must lie in [1, p]");
    if (n_measurements < 1 || n_measurements > p)
        throw InputError("measurement count must lie in [1, p]");
    if (kind == ProtocolKind::OppositeAdjacent && p % 2 != 0)
        throw InputError("opposite injection needs an even electrode count");

    Protocol prot;
    prot.kind = kind;
    prot.electrodes = p;
    prot.skip = skip;
    prot.nonuniform_stride = (p % n_injections != 0) || (p % n_measurements != 0);
    const int offset = kind == ProtocolKind::AdjacentAdjacent ? 1 : p / 2;
    for (int k : strided(p, n_injections))
        prot.injections.push_back({k, (k + offset) % p});
    for (int j : strided(p, n_measurements))
        prot.measurements.push_back({j, (j + 1) % p});
    expand_readings(prot);
    prot.validate();
    return prot;
}

nlohmann::json protocol_to_json(const Protocol& protocol)
{
    auto pairs = [](const std::vector<ElectrodePair>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& pr : v)
            a.push_back({pr.first, pr.second});
        return a;
    };
    return {
        {"kind", to_string(protocol.kind)},
        {"p", protocol.electrodes},
        {"injections", pairs(protocol.injections)},
        {"measurements", pairs(protocol.measurements)},
        {"skip", to_string(protocol.skip)},
    };
}

Protocol protocol_from_json(const nlohmann::json& j)
{
    try {
        Protocol prot;
        prot.kind = parse_protocol_kind(j.at("kind").get<std::string>());
        prot.electrodes = j.at("p").get<int>();
        prot.skip = j.contains("skip") ? parse_skip_rule(j.at("skip").get<std::string>()) : SkipRule::None;
        auto pairs = [](const nlohmann::json& a) {
            std::vector<ElectrodePair> out;
            for (const auto& pr : a) {
                if (pr.size() != 2)
                    throw FormatError("electrode pairs must have two entries");
                out.push_back({pr[0].get<int>(), pr[1].get<int>()});
            }
            return out;
        };
        prot.injections = pairs(j.at("injections"));
        prot.measurements = pairs(j.at("measurements"));
        const int p = prot.electrodes;
        prot.nonuniform_stride = p > 0
            && ((p % static_cast<int>(std::max<std::size_t>(1, prot.injections.size())) != 0)
                || (p % static_cast<int>(std::max<std::size_t>(1, prot.measurements.size())) != 0));
        expand_readings(prot);
        prot.validate();
        return prot;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed protocol JSON: ") + e.what());
    } catch (const InputError& e) {
        throw FormatError(std::string("invalid protocol: ") + e.what());
    }
}

void write_protocol(const Protocol& protocol, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << protocol_to_json(protocol).dump() << '\n';
}

Protocol read_protocol(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw FormatError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed protocol JSON in " + path.string() + ": " + e.what());
    }
    return protocol_from_json(j);
}

double snr_db(const Vector& clean, const Vector& eta)
{
    const double noise = eta.squaredNorm();
    if (noise == 0.0)
        return kInfinity;
    return 10.0 * std::log10(clean.squaredNorm() / noise);
}

NoiseDraw add_noise(const Vector& clean, double level, std::uint64_t seed)
{
    if (!(level >= 0.0))
        throw InputError("noise level must be non-negative");
    NoiseDraw out;
    out.eta = Vector::Zero(clean.size());
    if (level > 0.0 && clean.size() > 0) {
        Rng rng(seed);
        const double scale = level * clean.norm() / std::sqrt(static_cast<double>(clean.size()));
        for (Eigen::Index r = 0; r < clean.size(); ++r)
            out.eta[r] = scale * rng.normal();
    }
    out.noisy = clean + out.eta;
    out.snr_db = snr_db(clean, out.eta);
    return out;
}

Point pair_midpoint(const Mesh& mesh, const ElectrodePair& pair)
{
    const double a = mesh.electrode_center_angle(pair.first);
    double b = mesh.electrode_center_angle(pair.second);
    while (b <= a)
        b += kTwoPi;
    const double mid = 0.5 * (a + b);
    const double r = mesh.radius();
    return {r * std::cos(mid), r * std::sin(mid)};
}

Matrix oracle_feature_weights(const Mesh& mesh, const Protocol& protocol, const Vector& data)
{
    if (data.size() != protocol.size())
        throw InputError("measurement vector length does not match the protocol");
    if (protocol.electrodes != mesh.electrode_count())
        throw InputError("protocol electrode count does not match the mesh");

    std::vector<Point> inj_mid;
    std::vector<Point> meas_mid;
    for (const auto& pr : protocol.injections)
        inj_mid.push_back(pair_midpoint(mesh, pr));
    for (const auto& pr : protocol.measurements)
        meas_mid.push_back(pair_midpoint(mesh, pr));

    // A vertex can sit exactly on a midpoint shared by an injecting and a
    // measuring pair; the distance sum is floored at half the shortest
    // boundary edge there.
    double floor = kInfinity;
    for (const auto& e : mesh.boundary_edges)
        floor = std::min(floor, 0.5 * mesh.edge_length(e));

    const int n = mesh.vertex_count();
    Matrix w(n, protocol.size());
    for (int r = 0; r < protocol.size(); ++r) {
        const auto& rd = protocol.readings[r];
        for (int i = 0; i < n; ++i) {
            const Point& v = mesh.vertices[i];
            const double d = (v - meas_mid[rd.measurement]).norm() + (v - inj_mid[rd.injection]).norm();
            w(i, r) = data[r] / std::max(d, floor);
        }
    }
    return w;
}

} // namespace eitcs
