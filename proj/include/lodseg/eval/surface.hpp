#ifndef LODSEG_EVAL_SURFACE_HPP
#define LODSEG_EVAL_SURFACE_HPP

// Label-map surfaces.
//
// The binarized target is padded by one empty voxel and triangulated with
// marching cubes at iso level 0.5 (vertices at edge midpoints). Each cell face
// is resolved on its own, ambiguous faces separating their inside corners, so
// neighbouring cells always agree and the surface is closed. Three-vertex
// loops become one triangle, longer loops a fan around their centroid. Vertices are Taubin-smoothed
// (lambda 0.5, mu -0.53 per iteration) in voxel space and then mapped to world
// millimetres through the label affine. Faces are wound counter-clockwise
// when seen from outside.
//
// Targets: any class name of the scheme, "inner_gm" (white matter plus basal
// ganglia when present) or "outer_gm" (gray matter plus the inner set).
//
// PLY export: ASCII `format ascii 1.0`, float x y z vertices, faces as
// `3 i j k` with 0-based indices.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "lodseg/core/error.hpp"
#include "lodseg/core/log.hpp"
#include "lodseg/volume/volume.hpp"

namespace lodseg::eval {

struct SurfaceMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> faces;

  bool empty() const { return faces.empty(); }

  double area() const {
    double a = 0;
    for (const auto& f : faces)
      a += 0.5 * (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]).norm();
    return a;
  }

  // Undirected edge -> number of incident faces.
  std::map<std::pair<int, int>, int> edge_counts() const {
    std::map<std::pair<int, int>, int> e;
    for (const auto& f : faces)
      for (int k = 0; k < 3; ++k) {
        const int a = f[k], b = f[(k + 1) % 3];
        ++e[{std::min(a, b), std::max(a, b)}];
      }
    return e;
  }

  bool watertight() const {
    if (faces.empty()) return false;
    for (const auto& [edge, n] : edge_counts())
      if (n != 2) return false;
    return true;
  }

  long euler_characteristic() const {
    return static_cast<long>(vertices.size()) - static_cast<long>(edge_counts().size()) +
           static_cast<long>(faces.size());
  }
};

inline std::vector<int> surface_classes(const ClassScheme& scheme, const std::string& target) {
  std::vector<int> out;
  auto add = [&](const std::string& name) {
    for (int c = 0; c < scheme.num_classes(); ++c)
      if (scheme.name(c) == name) out.push_back(c);
  };
  if (target == "inner_gm" || target == "outer_gm") {
    add("white_matter");
    add("basal_ganglia");
    if (target == "outer_gm") add("gray_matter");
    if (out.empty()) throw ConfigError("surface target " + target + " needs gray/white matter classes in the scheme");
    return out;
  }
  add(target);
  if (out.empty()) throw ConfigError("unknown surface target \"" + target + "\"");
  if (out.front() == 0) throw ConfigError("surface target cannot be the background class");
  return out;
}

namespace detail {

inline void taubin(std::vector<Eigen::Vector3d>& v, const std::vector<std::array<int, 3>>& faces, int iterations) {
  if (iterations <= 0 || v.empty()) return;
  std::vector<std::vector<int>> nb(v.size());
  for (const auto& f : faces)
    for (int k = 0; k < 3; ++k) {
      nb[static_cast<std::size_t>(f[k])].push_back(f[(k + 1) % 3]);
      nb[static_cast<std::size_t>(f[(k + 1) % 3])].push_back(f[k]);
    }
  for (auto& n : nb) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  auto pass = [&](double factor) {
    std::vector<Eigen::Vector3d> next = v;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (nb[i].empty()) continue;
      Eigen::Vector3d mean = Eigen::Vector3d::Zero();
      for (int j : nb[i]) mean += v[static_cast<std::size_t>(j)];
      mean /= static_cast<double>(nb[i].size());
      next[i] = v[i] + factor * (mean - v[i]);
    }
    v.swap(next);
  };
  for (int it = 0; it < iterations; ++it) {
    pass(0.5);
    pass(-0.53);
  }
}

// Drops zero-area faces and unreferenced vertices.
inline void cleanup(SurfaceMesh& m) {
  std::vector<std::array<int, 3>> kept;
  for (const auto& f : m.faces) {
    const double a = (m.vertices[f[1]] - m.vertices[f[0]]).cross(m.vertices[f[2]] - m.vertices[f[0]]).norm();
    if (a > 1e-12) kept.push_back(f);
  }
  std::vector<int> remap(m.vertices.size(), -1);
  std::vector<Eigen::Vector3d> verts;
  for (auto& f : kept)
    for (int& i : f) {
      auto& r = remap[static_cast<std::size_t>(i)];
      if (r < 0) {
        r = static_cast<int>(verts.size());
        verts.push_back(m.vertices[static_cast<std::size_t>(i)]);
      }
      i = r;
    }
  m.vertices = std::move(verts);
  m.faces = std::move(kept);
}

}  // namespace detail

// Triangulates the boundary of `mask` (values 0/1, voxel order of `shape`);
// vertices are in voxel index coordinates.
inline SurfaceMesh marching_cubes(const std::vector<std::uint8_t>& mask, Shape3 shape) {
  const Shape3 p{shape.x + 2, shape.y + 2, shape.z + 2};
  auto inside = [&](int i, int j, int k) {
    const int x = i - 1, y = j - 1, z = k - 1;
    return shape.contains(x, y, z) && mask[shape.index(x, y, z)] != 0;
  };
  SurfaceMesh m;
  std::vector<Eigen::Vector3d> outward;  // per vertex, inside -> outside corner
  std::unordered_map<std::uint64_t, int> edge_vertex;

  // Corner c has offset (c & 1, c >> 1 & 1, c >> 2 & 1).
  static const int edges[12][2] = {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {0, 2}, {1, 3},
                                   {4, 6}, {5, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
  // Faces as cyclic corner loops.
  static const int faces[6][4] = {{0, 2, 6, 4}, {1, 3, 7, 5}, {0, 1, 5, 4}, {2, 3, 7, 6}, {0, 1, 3, 2}, {4, 5, 7, 6}};
  auto edge_id = [](int a, int b) {
    for (int e = 0; e < 12; ++e)
      if ((edges[e][0] == a && edges[e][1] == b) || (edges[e][0] == b && edges[e][1] == a)) return e;
    return -1;
  };
  static const auto face_edges = [&] {
    std::array<std::array<int, 4>, 6> fe{};
    for (int f = 0; f < 6; ++f)
      for (int k = 0; k < 4; ++k) fe[f][k] = edge_id(faces[f][k], faces[f][(k + 1) % 4]);
    return fe;
  }();

  for (int k = 0; k + 1 < p.z; ++k)
    for (int j = 0; j + 1 < p.y; ++j)
      for (int i = 0; i + 1 < p.x; ++i) {
        bool in[8];
        int count = 0;
        for (int c = 0; c < 8; ++c) {
          in[c] = inside(i + (c & 1), j + (c >> 1 & 1), k + (c >> 2 & 1));
          count += in[c];
        }
        if (count == 0 || count == 8) continue;
        auto corner_pos = [&](int c) { return Eigen::Vector3d(i + (c & 1), j + (c >> 1 & 1), k + (c >> 2 & 1)); };
        auto vertex = [&](int e) {
          const int a = edges[e][0], b = edges[e][1];
          std::size_t ga = p.index(i + (a & 1), j + (a >> 1 & 1), k + (a >> 2 & 1));
          std::size_t gb = p.index(i + (b & 1), j + (b >> 1 & 1), k + (b >> 2 & 1));
          const std::uint64_t key = static_cast<std::uint64_t>(std::min(ga, gb)) * p.voxels() + std::max(ga, gb);
          const auto it = edge_vertex.find(key);
          if (it != edge_vertex.end()) return it->second;
          const int id = static_cast<int>(m.vertices.size());
          m.vertices.push_back(0.5 * (corner_pos(a) + corner_pos(b)) - Eigen::Vector3d::Ones());
          outward.push_back(in[a] ? corner_pos(b) - corner_pos(a) : corner_pos(a) - corner_pos(b));
          edge_vertex.emplace(key, id);
          return id;
        };
        // Each crossed cube edge links to one crossed edge per adjacent face.
        std::array<std::array<int, 2>, 12> link;
        for (auto& l : link) l = {-1, -1};
        auto connect = [&](int a, int b) {
          link[a][link[a][0] < 0 ? 0 : 1] = b;
          link[b][link[b][0] < 0 ? 0 : 1] = a;
        };
        for (int f = 0; f < 6; ++f) {
          const auto& q = faces[f];
          const auto& fe = face_edges[f];
          int crossed[4], n = 0;
          for (int e = 0; e < 4; ++e)
            if (in[q[e]] != in[q[(e + 1) % 4]]) crossed[n++] = e;
          if (n == 2) {
            connect(fe[crossed[0]], fe[crossed[1]]);
          } else if (n == 4) {
            // Ambiguous face: cut off each inside corner separately.
            for (int c = 0; c < 4; ++c)
              if (in[q[c]]) connect(fe[(c + 3) % 4], fe[c]);
          }
        }
        bool used[12] = {};
        for (int start = 0; start < 12; ++start) {
          if (link[start][0] < 0 || used[start]) continue;
          std::vector<int> loop;
          int prev = -1, cur = start;
          while (!used[cur]) {
            used[cur] = true;
            loop.push_back(vertex(cur));
            const int next = link[cur][0] != prev ? link[cur][0] : link[cur][1];
            prev = cur;
            cur = next;
          }
          auto emit = [&](int a, int b, int c) {
            const auto& va = m.vertices[static_cast<std::size_t>(a)];
            const Eigen::Vector3d nrm =
                (m.vertices[static_cast<std::size_t>(b)] - va).cross(m.vertices[static_cast<std::size_t>(c)] - va);
            const Eigen::Vector3d out = outward[static_cast<std::size_t>(a)] + outward[static_cast<std::size_t>(b)] +
                                        outward[static_cast<std::size_t>(c)];
            if (nrm.dot(out) < 0) std::swap(b, c);
            m.faces.push_back({a, b, c});
          };
          if (loop.size() == 3) {
            emit(loop[0], loop[1], loop[2]);
            continue;
          }
          // Longer loops fan around a private centroid vertex.
          Eigen::Vector3d centre = Eigen::Vector3d::Zero(), dir = Eigen::Vector3d::Zero();
          for (int v : loop) {
            centre += m.vertices[static_cast<std::size_t>(v)];
            dir += outward[static_cast<std::size_t>(v)];
          }
          const int c = static_cast<int>(m.vertices.size());
          m.vertices.push_back(centre / static_cast<double>(loop.size()));
          outward.push_back(dir);
          for (std::size_t t = 0; t < loop.size(); ++t) emit(c, loop[t], loop[(t + 1) % loop.size()]);
        }
      }
  return m;
}

inline SurfaceMesh extract_surface(const LabelMap& l, const std::string& target, int smoothing_iters = 10) {
  if (smoothing_iters < 0) throw ConfigError("surface: smoothing_iters must be >= 0");
  const auto classes = surface_classes(l.scheme, target);
  std::vector<std::uint8_t> mask(l.data.size(), 0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < l.data.size(); ++i)
    for (int c : classes)
      if (l.data[i] == c) {
        mask[i] = 1;
        ++n;
      }
  if (n == 0) {
    log::warn("surface: target " + target + " is empty; returning an empty mesh");
    return {};
  }
  auto m = marching_cubes(mask, l.shape);
  detail::taubin(m.vertices, m.faces, smoothing_iters);
  for (auto& v : m.vertices) v = (l.affine * v.homogeneous()).head<3>();
  detail::cleanup(m);
  return m;
}

inline void write_ply(const SurfaceMesh& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\ncomment lodseg surface, world millimetres\n";
  out << "element vertex " << m.vertices.size() << "\nproperty float x\nproperty float y\nproperty float z\n";
  out << "element face " << m.faces.size() << "\nproperty list uchar int vertex_indices\nend_header\n";
  out.precision(7);
  for (const auto& v : m.vertices) out << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& f : m.faces) out << "3 " << f[0] << " " << f[1] << " " << f[2] << "\n";
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace lodseg::eval

#endif  // LODSEG_EVAL_SURFACE_HPP
