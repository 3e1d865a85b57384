#include "eitcs/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <openssl/evp.h>

namespace eitcs {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double signed_area(const Point& a, const Point& b, const Point& c)
{
    return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y()));
}

double wrap_angle(double a)
{
    a = std::fmod(a, kTwoPi);
    if (a < 0.0)
        a += kTwoPi;
    return a;
}

// Angular distance on the circle, in [0, pi].
double angular_distance(double a, double b)
{
    double d = std::fabs(wrap_angle(a) - wrap_angle(b));
    return std::min(d, kTwoPi - d);
}

void push_oriented(std::vector<Triangle>& tris, const std::vector<Point>& v, int a, int b, int c)
{
    if (signed_area(v[a], v[b], v[c]) < 0.0)
        std::swap(b, c);
    tris.push_back({a, b, c});
}

// Joins two concentric rings (inner first) with a sweep in angle.
void zip_rings(const std::vector<int>& inner, double inner_offset, const std::vector<int>& outer,
    double outer_offset, const std::vector<Point>& v, std::vector<Triangle>& tris)
{
    const int na = static_cast<int>(inner.size());
    const int nb = static_cast<int>(outer.size());
    auto alpha = [&](int i) { return inner_offset + kTwoPi * i / na; };
    auto beta = [&](int j) { return outer_offset + kTwoPi * j / nb; };

    const int j0 = static_cast<int>(std::lround((inner_offset - outer_offset) * nb / kTwoPi));
    auto outer_at = [&](int j) { return outer[((j % nb) + nb) % nb]; };

    int i = 0;
    int j = j0;
    while (i < na || j < j0 + nb) {
        const bool advance_inner = i < na && (j == j0 + nb || alpha(i + 1) < beta(j + 1));
        if (advance_inner) {
            push_oriented(tris, v, inner[i % na], outer_at(j), inner[(i + 1) % na]);
            ++i;
        } else {
            push_oriented(tris, v, inner[i % na], outer_at(j), outer_at(j + 1));
            ++j;
        }
    }
}

void append_u64(std::vector<unsigned char>& out, std::uint64_t x)
{
    for (int b = 0; b < 8; ++b)
        out.push_back(static_cast<unsigned char>((x >> (8 * b)) & 0xffu));
}

void append_i32(std::vector<unsigned char>& out, std::int32_t x)
{
    const auto u = static_cast<std::uint32_t>(x);
    for (int b = 0; b < 4; ++b)
        out.push_back(static_cast<unsigned char>((u >> (8 * b)) & 0xffu));
}

void append_f64(std::vector<unsigned char>& out, double x)
{
    std::uint64_t bits = 0;
    static_assert(sizeof(bits) == sizeof(x));
    std::memcpy(&bits, &x, sizeof(x));
    append_u64(out, bits);
}

} // namespace

double Mesh::triangle_area(int t) const
{
    const auto& tri = triangles[t];
    return signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
}

double Mesh::edge_length(const Edge& e) const
{
    return (vertices[e[1]] - vertices[e[0]]).norm();
}

double Mesh::electrode_length(int j) const
{
    double len = 0.0;
    for (int e : electrodes[j])
        len += edge_length(boundary_edges[e]);
    return len;
}

double Mesh::boundary_length() const
{
    double len = 0.0;
    for (const auto& e : boundary_edges)
        len += edge_length(e);
    return len;
}

double Mesh::electrode_center_angle(int j) const
{
    const double half = 0.5 * electrode_length(j);
    double walked = 0.0;
    for (int e : electrodes[j]) {
        const auto& edge = boundary_edges[e];
        const double len = edge_length(edge);
        if (walked + len >= half) {
            const double t = (half - walked) / len;
            const Point p = (1.0 - t) * vertices[edge[0]] + t * vertices[edge[1]];
            return wrap_angle(std::atan2(p.y(), p.x()));
        }
        walked += len;
    }
    throw InputError("electrode " + std::to_string(j) + " is empty");
}

double Mesh::radius() const
{
    double r = 0.0;
    for (const auto& p : vertices)
        r = std::max(r, p.norm());
    return r;
}

Mesh build_disk_mesh(const DiskMeshSpec& spec)
{
    const int p = spec.electrodes;
    if (!(spec.radius > 0.0))
        throw InputError("radius must be positive");
    if (!(spec.target_h > 0.0) || !(spec.target_h < spec.radius))
        throw InputError("target_h must lie in (0, radius)");
    if (p < 4 || p % 2 != 0)
        throw InputError("electrode count must be even and at least 4");
    if (!(spec.coverage > 0.0) || !(spec.coverage < 1.0))
        throw InputError("coverage must lie strictly between 0 and 1");

    const double R = spec.radius;
    const double h = spec.target_h;

    // Boundary edges per electrode period, chosen so the electrode spans a
    // whole number of edges as closely as possible.
    const int q0 = std::max(1, static_cast<int>(std::lround(kTwoPi * R / (h * p))));
    int q = -1;
    int q_el = 0;
    double best = kInfinity;
    for (int cand = q0; cand <= 2 * q0 + 2; ++cand) {
        const double want = spec.coverage * cand;
        const int got = static_cast<int>(std::lround(want));
        if (got < 1 || got >= cand)
            continue;
        const double err = std::fabs(want - got);
        if (err < best - 1e-12) {
            best = err;
            q = cand;
            q_el = got;
        }
    }
    if (q < 0) {
        std::ostringstream msg;
        msg << "infeasible electrode geometry: arc of " << spec.coverage * kTwoPi * R / p
            << " m is shorter than one boundary edge at target_h=" << h;
        throw InputError(msg.str());
    }
    const int n_boundary = p * q;
    const double boundary_offset = (q_el % 2 == 0) ? 0.0 : 0.5 * kTwoPi / n_boundary;

    const int rings = std::max(2, static_cast<int>(std::lround(R / h)));

    std::vector<Point> vertices;
    std::vector<Triangle> triangles;
    vertices.emplace_back(0.0, 0.0);

    std::vector<int> previous;
    double previous_offset = 0.0;
    for (int k = 1; k <= rings; ++k) {
        const double r = R * k / rings;
        int count = 0;
        double offset = 0.0;
        if (k == rings) {
            count = n_boundary;
            offset = boundary_offset;
        } else {
            count = std::max(6, static_cast<int>(std::lround(kTwoPi * r / h)));
            offset = (k % 2 == 0) ? 0.0 : 0.5 * kTwoPi / count;
        }
        std::vector<int> ring(count);
        for (int i = 0; i < count; ++i) {
            const double a = offset + kTwoPi * i / count;
            ring[i] = static_cast<int>(vertices.size());
            vertices.emplace_back(r * std::cos(a), r * std::sin(a));
        }
        if (k == 1) {
            for (int i = 0; i < count; ++i)
                push_oriented(triangles, vertices, 0, ring[i], ring[(i + 1) % count]);
        } else {
            zip_rings(previous, previous_offset, ring, offset, vertices, triangles);
        }
        previous = std::move(ring);
        previous_offset = offset;
    }

    const auto walk = boundary_walk(vertices, triangles);
    const double half_width = 0.5 * q_el * kTwoPi / n_boundary;
    std::vector<std::vector<int>> electrodes(p);
    for (int j = 0; j < p; ++j) {
        const double center = kTwoPi * j / p;
        std::vector<std::pair<double, int>> members;
        for (int e = 0; e < static_cast<int>(walk.size()); ++e) {
            const Point mid = 0.5 * (vertices[walk[e][0]] + vertices[walk[e][1]]);
            const double a = std::atan2(mid.y(), mid.x());
            if (angular_distance(a, center) < half_width) {
                // order along the arc, counterclockwise
                double rel = wrap_angle(a - center + std::numbers::pi);
                members.emplace_back(rel, e);
            }
        }
        std::sort(members.begin(), members.end());
        for (const auto& [rel, e] : members)
            electrodes[j].push_back(e);
    }

    Mesh mesh;
    mesh.vertices = std::move(vertices);
    mesh.triangles = std::move(triangles);
    mesh.boundary_edges = walk;
    mesh.electrodes = std::move(electrodes);
    validate(mesh);
    return mesh;
}

std::vector<Edge> boundary_walk(const std::vector<Point>& vertices, const std::vector<Triangle>& triangles)
{
    std::map<std::pair<int, int>, int> count;
    for (const auto& t : triangles) {
        for (int s = 0; s < 3; ++s) {
            int a = t[s];
            int b = t[(s + 1) % 3];
            ++count[{std::min(a, b), std::max(a, b)}];
        }
    }
    // tail -> head of each oriented boundary edge
    std::map<int, int> next;
    for (const auto& t : triangles) {
        for (int s = 0; s < 3; ++s) {
            int a = t[s];
            int b = t[(s + 1) % 3];
            if (count[{std::min(a, b), std::max(a, b)}] == 1) {
                if (!next.emplace(a, b).second)
                    throw InputError("boundary is not a simple closed curve");
            }
        }
    }
    std::vector<Edge> walk;
    if (next.empty())
        return walk;
    (void)vertices;
    const int start = next.begin()->first;
    int cur = start;
    do {
        auto it = next.find(cur);
        if (it == next.end())
            throw InputError("open boundary curve");
        walk.push_back({cur, it->second});
        cur = it->second;
        if (walk.size() > next.size())
            throw InputError("boundary walk does not close");
    } while (cur != start);
    if (walk.size() != next.size())
        throw InputError("boundary has more than one component");
    return walk;
}

Mesh make_mesh(std::vector<Point> vertices, std::vector<Triangle> triangles,
    std::vector<std::vector<int>> electrodes)
{
    Mesh mesh;
    for (const auto& t : triangles)
        for (int v : t)
            if (v < 0 || v >= static_cast<int>(vertices.size()))
                throw InputError("triangle references vertex out of range");
    mesh.boundary_edges = boundary_walk(vertices, triangles);
    mesh.vertices = std::move(vertices);
    mesh.triangles = std::move(triangles);
    mesh.electrodes = std::move(electrodes);
    validate(mesh);
    return mesh;
}

void validate(const Mesh& mesh)
{
    const int nv = mesh.vertex_count();
    if (mesh.version != Mesh::kFormatVersion)
        throw InputError("unsupported mesh version " + std::to_string(mesh.version));
    if (nv < 3 || mesh.triangles.empty())
        throw InputError("mesh needs at least one triangle");
    for (const auto& p : mesh.vertices)
        if (!p.allFinite())
            throw InputError("non-finite vertex coordinate");

    std::map<std::pair<int, int>, int> count;
    for (int t = 0; t < mesh.triangle_count(); ++t) {
        const auto& tri = mesh.triangles[t];
        for (int v : tri)
            if (v < 0 || v >= nv)
                throw InputError("triangle references vertex out of range");
        if (!(mesh.triangle_area(t) > 0.0))
            throw InputError("triangle " + std::to_string(t) + " is not counterclockwise with positive area");
        for (int s = 0; s < 3; ++s) {
            int a = tri[s];
            int b = tri[(s + 1) % 3];
            if (++count[{std::min(a, b), std::max(a, b)}] > 2)
                throw InputError("non-conformal mesh: edge shared by more than two triangles");
        }
    }
    std::size_t boundary = 0;
    for (const auto& [edge, c] : count)
        if (c == 1)
            ++boundary;
    if (boundary != mesh.boundary_edges.size())
        throw InputError("boundary edge list does not match the triangulation");
    for (const auto& e : mesh.boundary_edges) {
        auto it = count.find({std::min(e[0], e[1]), std::max(e[0], e[1])});
        if (it == count.end() || it->second != 1)
            throw InputError("listed boundary edge is not on the boundary");
    }

    std::set<int> used;
    for (int j = 0; j < mesh.electrode_count(); ++j) {
        const auto& el = mesh.electrodes[j];
        if (el.empty())
            throw InputError("electrode " + std::to_string(j) + " has no edges");
        for (std::size_t k = 0; k < el.size(); ++k) {
            const int e = el[k];
            if (e < 0 || e >= static_cast<int>(mesh.boundary_edges.size()))
                throw InputError("electrode edge index out of range");
            if (!used.insert(e).second)
                throw InputError("electrodes overlap on boundary edge " + std::to_string(e));
            if (k > 0 && mesh.boundary_edges[el[k - 1]][1] != mesh.boundary_edges[e][0])
                throw InputError("electrode " + std::to_string(j) + " is not a contiguous arc");
        }
    }
}

std::vector<Edge> unique_edges(const Mesh& mesh)
{
    std::set<std::pair<int, int>> edges;
    for (const auto& t : mesh.triangles)
        for (int s = 0; s < 3; ++s) {
            int a = t[s];
            int b = t[(s + 1) % 3];
            edges.insert({std::min(a, b), std::max(a, b)});
        }
    std::vector<Edge> out;
    out.reserve(edges.size());
    for (const auto& [a, b] : edges)
        out.push_back({a, b});
    return out;
}

VertexAdjacency vertex_adjacency(const Mesh& mesh)
{
    VertexAdjacency adj;
    adj.neighbors.assign(mesh.vertex_count(), {});
    for (const auto& e : unique_edges(mesh)) {
        adj.neighbors[e[0]].push_back(e[1]);
        adj.neighbors[e[1]].push_back(e[0]);
    }
    adj.weights.resize(mesh.vertex_count());
    for (int i = 0; i < mesh.vertex_count(); ++i) {
        auto& nb = adj.neighbors[i];
        std::sort(nb.begin(), nb.end());
        adj.weights[i].reserve(nb.size());
        for (int k : nb) {
            const double d = (mesh.vertices[i] - mesh.vertices[k]).norm();
            if (!(d > 0.0))
                throw InputError("duplicate vertices " + std::to_string(i) + " and " + std::to_string(k));
            adj.weights[i].push_back(1.0 / d);
        }
    }
    return adj;
}

std::string mesh_digest(const Mesh& mesh)
{
    std::vector<unsigned char> buf;
    const char tag[] = "EITMESH1";
    buf.insert(buf.end(), tag, tag + 8);
    append_u64(buf, mesh.vertices.size());
    for (const auto& p : mesh.vertices) {
        append_f64(buf, p.x());
        append_f64(buf, p.y());
    }
    append_u64(buf, mesh.triangles.size());
    for (const auto& t : mesh.triangles)
        for (int v : t)
            append_i32(buf, v);
    append_u64(buf, mesh.electrodes.size());
    for (const auto& el : mesh.electrodes) {
        append_u64(buf, el.size());
        for (int e : el)
            append_i32(buf, e);
    }

    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(buf.data(), buf.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

nlohmann::json mesh_to_json(const Mesh& mesh)
{
    nlohmann::json verts = nlohmann::json::array();
    for (const auto& p : mesh.vertices)
        verts.push_back({p.x(), p.y()});
    return {
        {"version", mesh.version},
        {"vertices", verts},
        {"triangles", mesh.triangles},
        {"electrodes", mesh.electrodes},
    };
}

Mesh mesh_from_json(const nlohmann::json& j)
{
    try {
        const int version = j.at("version").get<int>();
        if (version != Mesh::kFormatVersion)
            throw FormatError("unsupported mesh version " + std::to_string(version));
        std::vector<Point> vertices;
        for (const auto& v : j.at("vertices")) {
            if (v.size() != 2)
                throw FormatError("vertex entries must be [x, y]");
            vertices.emplace_back(v[0].get<double>(), v[1].get<double>());
        }
        auto triangles = j.at("triangles").get<std::vector<Triangle>>();
        auto electrodes = j.at("electrodes").get<std::vector<std::vector<int>>>();
        return make_mesh(std::move(vertices), std::move(triangles), std::move(electrodes));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed mesh JSON: ") + e.what());
    } catch (const InputError& e) {
        throw FormatError(std::string("invalid mesh: ") + e.what());
    }
}

void write_mesh(const Mesh& mesh, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << mesh_to_json(mesh).dump() << '\n';
}

Mesh read_mesh(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw FormatError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed mesh JSON in " + path.string() + ": " + e.what());
    }
    return mesh_from_json(j);
}

} // namespace eitcs
