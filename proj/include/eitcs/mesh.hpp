#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eitcs/common.hpp"

namespace eitcs {

using Triangle = std::array<int, 3>;
using Edge = std::array<int, 2>;

// Triangulated 2-D domain with electrodes on its boundary.
//
// Boundary edges are stored oriented counterclockwise and in walk order,
// starting from the edge whose tail has the smallest vertex index.
// Electrodes index into that list.
struct Mesh {
    static constexpr int kFormatVersion = 1;

    int version = kFormatVersion;
    std::vector<Point> vertices;
    std::vector<Triangle> triangles;
    std::vector<Edge> boundary_edges;
    std::vector<std::vector<int>> electrodes;

    int vertex_count() const { return static_cast<int>(vertices.size()); }
    int triangle_count() const { return static_cast<int>(triangles.size()); }
    int electrode_count() const { return static_cast<int>(electrodes.size()); }

    double triangle_area(int t) const;
    double edge_length(const Edge& e) const;
    double electrode_length(int j) const;
    double boundary_length() const;
    // Polar angle of the arc-length midpoint of electrode j.
    double electrode_center_angle(int j) const;
    // Largest distance of any vertex from the origin.
    double radius() const;
};

// Parameters of the structured polar disk generator.
struct DiskMeshSpec {
    double radius = 1.0;
    double target_h = 0.1;
    int electrodes = 16;
    double coverage = 0.5;
};

// Deterministic disk triangulation: concentric rings joined by a zipper
// sweep, boundary ring snapped so that electrode arcs start and end on nodes.
// Electrode j is centered at angle 2*pi*j/p.
Mesh build_disk_mesh(const DiskMeshSpec& spec);

// Assemble a mesh from raw arrays; derives the canonical boundary walk and
// runs validate().
Mesh make_mesh(std::vector<Point> vertices, std::vector<Triangle> triangles,
    std::vector<std::vector<int>> electrodes);

// Throws InputError on orientation, conformity or electrode violations.
void validate(const Mesh& mesh);

// Canonical counterclockwise boundary walk of a triangulation.
std::vector<Edge> boundary_walk(const std::vector<Point>& vertices,
    const std::vector<Triangle>& triangles);

// Unique undirected edges (i < k), sorted lexicographically.
std::vector<Edge> unique_edges(const Mesh& mesh);

struct VertexAdjacency {
    // neighbors[i] is sorted ascending; weights[i][j] = 1 / |v_i - v_neighbors[i][j]|.
    std::vector<std::vector<int>> neighbors;
    std::vector<std::vector<double>> weights;

    int vertex_count() const { return static_cast<int>(neighbors.size()); }
    int degree(int i) const { return static_cast<int>(neighbors[i].size()); }
};

VertexAdjacency vertex_adjacency(const Mesh& mesh);

// SHA-256 (hex) over the little-endian binary image of vertices, triangles
// and electrodes.
std::string mesh_digest(const Mesh& mesh);

nlohmann::json mesh_to_json(const Mesh& mesh);
Mesh mesh_from_json(const nlohmann::json& j);
void write_mesh(const Mesh& mesh, const std::filesystem::path& path);
Mesh read_mesh(const std::filesystem::path& path);

} // namespace eitcs
