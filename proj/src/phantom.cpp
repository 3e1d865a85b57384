#include "eitcs/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "eitcs/parallel.hpp"
#include "eitcs/rng.hpp"

namespace eitcs {

namespace fs = std::filesystem;

void PhantomConfig::validate(const Box& box) const
{
    if (min_inclusions < 0 || max_inclusions < min_inclusions)
        throw InputError("inclusion count range is empty");
    if (!(min_radius > 0.0) || max_radius < min_radius)
        throw InputError("inclusion radius range is empty");
    if (max_value < min_value)
        throw InputError("inclusion value range is empty");
    if (!(placement_radius > max_radius))
        throw InputError("placement radius must exceed the largest inclusion radius");
    if (max_attempts < 1)
        throw InputError("rejection budget must be positive");
    if (forced_count && *forced_count < 0)
        throw InputError("forced inclusion count must be non-negative");
    if (!box.contains(background) || !box.contains(min_value) || !box.contains(max_value))
        throw InputError("phantom values must lie inside the conductivity box");
}

nlohmann::json PhantomConfig::to_json() const
{
    nlohmann::json j = {
        {"min_inclusions", min_inclusions},
        {"max_inclusions", max_inclusions},
        {"min_radius", min_radius},
        {"max_radius", max_radius},
        {"min_value", min_value},
        {"max_value", max_value},
        {"background", background},
        {"placement_radius", placement_radius},
        {"max_attempts", max_attempts},
    };
    j["forced_count"] = forced_count ? nlohmann::json(*forced_count) : nlohmann::json(nullptr);
    return j;
}

PhantomConfig PhantomConfig::from_json(const nlohmann::json& j)
{
    PhantomConfig c;
    c.min_inclusions = j.at("min_inclusions").get<int>();
    c.max_inclusions = j.at("max_inclusions").get<int>();
    c.min_radius = j.at("min_radius").get<double>();
    c.max_radius = j.at("max_radius").get<double>();
    c.min_value = j.at("min_value").get<double>();
    c.max_value = j.at("max_value").get<double>();
    c.background = j.at("background").get<double>();
    c.placement_radius = j.at("placement_radius").get<double>();
    c.max_attempts = j.at("max_attempts").get<int>();
    if (j.contains("forced_count") && !j.at("forced_count").is_null())
        c.forced_count = j.at("forced_count").get<int>();
    return c;
}

ConductivityField rasterize(const Mesh& mesh, const std::vector<Inclusion>& inclusions, double background,
    const Box& box)
{
    ConductivityField f = ConductivityField::constant(mesh.vertex_count(), background, box);
    f.mesh_digest = mesh_digest(mesh);
    for (int i = 0; i < mesh.vertex_count(); ++i)
        for (const auto& inc : inclusions)
            if ((mesh.vertices[i] - inc.center).norm() <= inc.radius)
                f.values[i] = inc.value;
    return f;
}

Phantom generate_phantom(const Mesh& mesh, const PhantomConfig& config, std::uint64_t seed, const Box& box)
{
    config.validate(box);
    Rng rng(seed);
    const int count = config.forced_count ? *config.forced_count
                                          : rng.uniform_int(config.min_inclusions, config.max_inclusions);
    Phantom ph;
    int attempts = 0;
    while (static_cast<int>(ph.inclusions.size()) < count) {
        if (++attempts > config.max_attempts)
            throw NumericalError("could not place " + std::to_string(count) + " disjoint inclusions within "
                + std::to_string(config.max_attempts) + " attempts");
        Inclusion inc;
        inc.radius = rng.uniform(config.min_radius, config.max_radius);
        // Area-uniform center so that the whole disk fits the placement radius.
        const double reach = config.placement_radius - inc.radius;
        const double r = reach * std::sqrt(rng.uniform());
        const double a = 2.0 * std::numbers::pi * rng.uniform();
        inc.center = Point(r * std::cos(a), r * std::sin(a));
        inc.value = rng.uniform(config.min_value, config.max_value);
        bool disjoint = true;
        for (const auto& other : ph.inclusions)
            disjoint = disjoint && (inc.center - other.center).norm() > inc.radius + other.radius;
        if (disjoint)
            ph.inclusions.push_back(inc);
    }
    ph.field = rasterize(mesh, ph.inclusions, config.background, box);
    return ph;
}

int gradient_sparsity(const Vector& sigma, const VertexAdjacency& adj, double tol)
{
    if (!(tol > 0.0))
        throw InputError("sparsity tolerance must be positive");
    if (sigma.size() != adj.vertex_count())
        throw InputError("gradient_sparsity: length mismatch");
    int s = 0;
    for (int i = 0; i < adj.vertex_count(); ++i)
        for (int k : adj.neighbors[i])
            if (k > i && std::abs(sigma[i] - sigma[k]) > tol)
                ++s;
    return s;
}

double psnr(const Vector& reconstruction, const Vector& truth, double peak)
{
    if (reconstruction.size() != truth.size() || truth.size() == 0)
        throw InputError("psnr: length mismatch");
    const double mse = (reconstruction - truth).squaredNorm() / static_cast<double>(truth.size());
    if (mse == 0.0)
        return kInfinity;
    return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const Vector& reconstruction, const Vector& truth)
{
    if (truth.size() == 0)
        throw InputError("psnr: empty field");
    return psnr(reconstruction, truth, truth.maxCoeff());
}

double rel_err(const Vector& reconstruction, const Vector& truth)
{
    if (reconstruction.size() != truth.size())
        throw InputError("rel_err: length mismatch");
    const double nt = truth.norm();
    if (nt == 0.0)
        throw InputError("rel_err: reference field is zero");
    return (reconstruction - truth).norm() / nt;
}

namespace {

constexpr char kMagic[4] = {'E', 'I', 'T', 'B'};
constexpr std::uint32_t kArrayVersion = 1;

template <class T>
void put_le(std::ostream& out, T value)
{
    unsigned char b[sizeof(T)];
    for (std::size_t k = 0; k < sizeof(T); ++k)
        b[k] = static_cast<unsigned char>((value >> (8 * k)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& in)
{
    unsigned char b[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(b), sizeof(T)))
        throw FormatError("truncated array file");
    T v = 0;
    for (std::size_t k = 0; k < sizeof(T); ++k)
        v |= static_cast<T>(b[k]) << (8 * k);
    return v;
}

} // namespace

void write_array(const Vector& values, const fs::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(kMagic, 4);
    put_le<std::uint32_t>(out, kArrayVersion);
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(values.size()));
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        std::uint64_t bits;
        const double v = values[i];
        std::memcpy(&bits, &v, sizeof bits);
        put_le<std::uint64_t>(out, bits);
    }
    if (!out)
        throw std::runtime_error("write failed for " + path.string());
}

Vector read_array(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError(path.string() + " is not an EITB array");
    if (get_le<std::uint32_t>(in) != kArrayVersion)
        throw FormatError(path.string() + " has an unsupported array version");
    const std::uint64_t len = get_le<std::uint64_t>(in);
    const auto payload = fs::file_size(path) - 16;
    if (payload != len * 8)
        throw FormatError(path.string() + " length field disagrees with the file size");
    Vector v(static_cast<Eigen::Index>(len));
    for (std::uint64_t i = 0; i < len; ++i) {
        const std::uint64_t bits = get_le<std::uint64_t>(in);
        double d;
        std::memcpy(&d, &bits, sizeof d);
        v[static_cast<Eigen::Index>(i)] = d;
    }
    return v;
}

void write_array_csv(const Vector& values, const fs::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "vertex_index,value\n";
    char buf[64];
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", values[i]);
        out << i << ',' << buf << '\n';
    }
}

std::string sample_stem(int id)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", id);
    return buf;
}

namespace {

nlohmann::json inclusion_json(const Inclusion& inc)
{
    return {{"center", {inc.center.x(), inc.center.y()}}, {"radius", inc.radius}, {"value", inc.value}};
}

Inclusion inclusion_from(const nlohmann::json& j)
{
    Inclusion inc;
    inc.center = Point(j.at("center").at(0).get<double>(), j.at("center").at(1).get<double>());
    inc.radius = j.at("radius").get<double>();
    inc.value = j.at("value").get<double>();
    return inc;
}

nlohmann::json maybe_inf(double v)
{
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

} // namespace

nlohmann::json DatasetManifest::to_json() const
{
    nlohmann::json samples_json = nlohmann::json::array();
    for (const auto& s : samples) {
        nlohmann::json incs = nlohmann::json::array();
        for (const auto& inc : s.inclusions)
            incs.push_back(inclusion_json(inc));
        samples_json.push_back({
            {"id", s.id},
            {"sigma", s.sigma_file},
            {"clean", s.clean_file},
            {"noisy", s.noisy_file},
            {"mask", s.mask_file},
            {"phantom_seed", s.phantom_seed},
            {"noise_seed", s.noise_seed},
            {"noise_level", s.noise_level},
            {"delta", s.delta},
            {"snr_db", maybe_inf(s.snr_db)},
            {"inclusions", incs},
        });
    }
    return {
        {"version", kFormatVersion},
        {"mesh", mesh_file},
        {"mesh_digest", mesh_digest},
        {"protocol", protocol_file},
        {"n", vertices},
        {"m", measurements},
        {"forward", {{"order", forward.order}, {"contact_impedance", forward.contact_impedance}}},
        {"seed", config.seed},
        {"noise_level", config.noise_level},
        {"dilation_hops", config.dilation_hops},
        {"box", {config.box.lower, config.box.upper}},
        {"phantom", config.phantom.to_json()},
        {"psnr_peak", "max(sigma_true)"},
        {"array_format", {{"magic", "EITB"}, {"version", 1}, {"endianness", "little"}, {"dtype", "f64"}}},
        {"shapes", {{"sigma", {vertices}}, {"clean", {measurements}}, {"noisy", {measurements}}}},
        {"split",
            {{"fractions", {config.train_fraction, config.validation_fraction,
                               1.0 - config.train_fraction - config.validation_fraction}},
                {"train", train},
                {"validation", validation},
                {"test", test}}},
        {"samples", samples_json},
    };
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j)
{
    try {
        if (j.at("version").get<int>() != kFormatVersion)
            throw FormatError("unsupported manifest version");
        DatasetManifest m;
        m.mesh_file = j.at("mesh").get<std::string>();
        m.mesh_digest = j.at("mesh_digest").get<std::string>();
        m.protocol_file = j.at("protocol").get<std::string>();
        m.vertices = j.at("n").get<int>();
        m.measurements = j.at("m").get<int>();
        m.forward.order = j.at("forward").at("order").get<int>();
        m.forward.contact_impedance = j.at("forward").at("contact_impedance").get<double>();
        m.config.seed = j.at("seed").get<std::uint64_t>();
        m.config.noise_level = j.at("noise_level").get<double>();
        m.config.dilation_hops = j.at("dilation_hops").get<int>();
        m.config.box = {j.at("box").at(0).get<double>(), j.at("box").at(1).get<double>()};
        m.config.phantom = PhantomConfig::from_json(j.at("phantom"));
        const auto& split = j.at("split");
        m.config.train_fraction = split.at("fractions").at(0).get<double>();
        m.config.validation_fraction = split.at("fractions").at(1).get<double>();
        m.train = split.at("train").get<std::vector<int>>();
        m.validation = split.at("validation").get<std::vector<int>>();
        m.test = split.at("test").get<std::vector<int>>();
        for (const auto& s : j.at("samples")) {
            DatasetSample d;
            d.id = s.at("id").get<int>();
            d.sigma_file = s.at("sigma").get<std::string>();
            d.clean_file = s.at("clean").get<std::string>();
            d.noisy_file = s.at("noisy").get<std::string>();
            d.mask_file = s.at("mask").get<std::string>();
            d.phantom_seed = s.at("phantom_seed").get<std::uint64_t>();
            d.noise_seed = s.at("noise_seed").get<std::uint64_t>();
            d.noise_level = s.at("noise_level").get<double>();
            d.delta = s.at("delta").get<double>();
            d.snr_db = s.at("snr_db").is_null() ? kInfinity : s.at("snr_db").get<double>();
            for (const auto& inc : s.at("inclusions"))
                d.inclusions.push_back(inclusion_from(inc));
            m.samples.push_back(std::move(d));
        }
        m.config.samples = static_cast<int>(m.samples.size());
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed manifest: ") + e.what());
    }
}

namespace {

void write_json(const nlohmann::json& j, const fs::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << j.dump(1) << '\n';
}

} // namespace

DatasetManifest generate_dataset(const Mesh& mesh, const Protocol& protocol, const DatasetConfig& config,
    const CemOptions& forward, const fs::path& dir)
{
    if (config.samples < 1)
        throw InputError("dataset needs at least one sample");
    if (!(config.noise_level >= 0.0))
        throw InputError("noise level must be non-negative");
    if (!(config.train_fraction >= 0.0 && config.validation_fraction >= 0.0
            && config.train_fraction + config.validation_fraction <= 1.0))
        throw InputError("split fractions must be non-negative and sum to at most 1");
    config.phantom.validate(config.box);

    fs::create_directories(dir / "samples");
    fs::create_directories(dir / "masks");

    const auto model = std::make_shared<CemModel>(mesh, forward);
    const ForwardMap map(model, protocol);
    const auto adj = vertex_adjacency(mesh);

    DatasetManifest manifest;
    manifest.mesh_digest = model->mesh_digest();
    manifest.vertices = mesh.vertex_count();
    manifest.measurements = protocol.size();
    manifest.forward = forward;
    manifest.config = config;
    manifest.samples.resize(config.samples);

    write_mesh(mesh, dir / manifest.mesh_file);
    write_protocol(protocol, dir / manifest.protocol_file);

    const Vector sigma0 = Vector::Constant(mesh.vertex_count(), config.phantom.background);
    const double tol = default_support_tolerance(config.box);
    parallel_for(config.samples, [&](int id) {
        DatasetSample& s = manifest.samples[id];
        s.id = id;
        s.phantom_seed = derive_seed(config.seed, 2 * static_cast<std::uint64_t>(id));
        s.noise_seed = derive_seed(config.seed, 2 * static_cast<std::uint64_t>(id) + 1);
        s.noise_level = config.noise_level;
        const auto stem = sample_stem(id);
        s.sigma_file = "samples/" + stem + ".sigma.eitb";
        s.clean_file = "samples/" + stem + ".clean.eitb";
        s.noisy_file = "samples/" + stem + ".noisy.eitb";
        s.mask_file = "masks/" + stem + ".json";

        const Phantom ph = generate_phantom(mesh, config.phantom, s.phantom_seed, config.box);
        s.inclusions = ph.inclusions;
        const Vector clean = map.apply(ph.field);
        const NoiseDraw noise = add_noise(clean, config.noise_level, s.noise_seed);
        s.delta = noise.eta.norm();
        s.snr_db = noise.snr_db;
        const OracleMask mask = ideal_oracle(ph.field, sigma0, tol, config.dilation_hops, adj);

        write_array(ph.field.values, dir / s.sigma_file);
        write_array(clean, dir / s.clean_file);
        write_array(noise.noisy, dir / s.noisy_file);
        write_mask(mask, dir / s.mask_file);
    });

    // Seeded shuffle, then contiguous train / validation / test blocks.
    std::vector<int> order(config.samples);
    for (int i = 0; i < config.samples; ++i)
        order[i] = i;
    Rng rng(derive_seed(config.seed, ~std::uint64_t{0}));
    for (int i = config.samples - 1; i > 0; --i)
        std::swap(order[i], order[rng.uniform_int(0, i)]);
    const int n_train = static_cast<int>(std::lround(config.train_fraction * config.samples));
    const int n_val = std::min(config.samples - n_train,
        static_cast<int>(std::lround(config.validation_fraction * config.samples)));
    manifest.train.assign(order.begin(), order.begin() + n_train);
    manifest.validation.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    manifest.test.assign(order.begin() + n_train + n_val, order.end());
    for (auto* part : {&manifest.train, &manifest.validation, &manifest.test})
        std::sort(part->begin(), part->end());

    write_json(manifest.to_json(), dir / "manifest.json");
    return manifest;
}

LoadedDataset load_dataset(const fs::path& dir)
{
    std::ifstream in(dir / "manifest.json");
    if (!in)
        throw FormatError("no manifest.json in " + dir.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed manifest: ") + e.what());
    }
    LoadedDataset ds;
    ds.manifest = DatasetManifest::from_json(j);
    ds.mesh = read_mesh(dir / ds.manifest.mesh_file);
    if (mesh_digest(ds.mesh) != ds.manifest.mesh_digest)
        throw FormatError("mesh digest does not match the manifest");
    ds.protocol = read_protocol(dir / ds.manifest.protocol_file);
    if (ds.mesh.vertex_count() != ds.manifest.vertices || ds.protocol.size() != ds.manifest.measurements)
        throw FormatError("manifest shapes disagree with the mesh or protocol");
    for (const auto& s : ds.manifest.samples)
        for (const auto* f : {&s.sigma_file, &s.clean_file, &s.noisy_file, &s.mask_file})
            if (!fs::exists(dir / *f))
                throw FormatError("listed file is missing: " + *f);
    return ds;
}

SampleData load_sample(const fs::path& dir, const LoadedDataset& ds, int index)
{
    if (index < 0 || index >= static_cast<int>(ds.manifest.samples.size()))
        throw InputError("sample index out of range");
    const auto& s = ds.manifest.samples[index];
    SampleData d;
    d.truth = {read_array(dir / s.sigma_file), ds.manifest.config.box, ds.manifest.mesh_digest};
    d.clean = read_array(dir / s.clean_file);
    d.noisy = read_array(dir / s.noisy_file);
    d.mask = read_mask(dir / s.mask_file, ds.manifest.mesh_digest);
    if (d.truth.size() != ds.manifest.vertices || d.mask.size() != ds.manifest.vertices)
        throw FormatError("sample " + std::to_string(s.id) + " has the wrong field length");
    if (d.clean.size() != ds.manifest.measurements || d.noisy.size() != ds.manifest.measurements)
        throw FormatError("sample " + std::to_string(s.id) + " has the wrong measurement length");
    return d;
}

} // namespace eitcs
