#include "vibrec/geometry.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "vibrec/error.hpp"

namespace vibrec::geo {

Geometry build_grid(int nx, int ny, int lead_count, double ring_radius) {
  if (nx < 2 || ny < 2) {
    throw ConfigError("build_grid: lattice needs nx, ny >= 2 (got " + std::to_string(nx) + "x" +
                      std::to_string(ny) + ")");
  }
  if (lead_count < 1) {
    throw ConfigError("build_grid: lead_count must be >= 1");
  }
  const double diagonal = std::hypot(nx - 1.0, ny - 1.0);
  if (!(ring_radius > diagonal)) {
    throw ConfigError("build_grid: ring_radius " + std::to_string(ring_radius) +
                      " must exceed the lattice diagonal " + std::to_string(diagonal));
  }

  Geometry g;
  g.nx = nx;
  g.ny = ny;
  g.ring_radius = ring_radius;
  const double cx = 0.5 * (nx - 1);
  const double cy = 0.5 * (ny - 1);
  g.heart_nodes.reserve(static_cast<std::size_t>(nx) * ny);
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      g.heart_nodes.push_back({ix - cx, iy - cy, 0.0});
    }
  }

  g.adjacency.resize(g.heart_nodes.size());
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      auto& nbrs = g.adjacency[static_cast<std::size_t>(iy * nx + ix)];
      if (iy > 0) nbrs.push_back((iy - 1) * nx + ix);
      if (ix > 0) nbrs.push_back(iy * nx + ix - 1);
      if (ix + 1 < nx) nbrs.push_back(iy * nx + ix + 1);
      if (iy + 1 < ny) nbrs.push_back((iy + 1) * nx + ix);
    }
  }

  g.leads.reserve(static_cast<std::size_t>(lead_count));
  for (int i = 0; i < lead_count; ++i) {
    const double phi = 2.0 * std::numbers::pi * i / lead_count;
    g.leads.push_back({ring_radius * std::cos(phi), ring_radius * std::sin(phi), 0.0});
  }

  // Half-diagonal is the farthest any node (rotated or not) sits from the
  // origin, so every lead clears d_min once ring_radius exceeds the diagonal.
  for (const auto& lead : g.leads) {
    for (const auto& node : g.heart_nodes) {
      if (std::hypot(lead.x - node.x, lead.y - node.y, lead.z - node.z) <= kMinDistance) {
        throw ConfigError("build_grid: lead within d_min of a heart node");
      }
    }
  }
  return g;
}

int lattice_distance(const Geometry& geom, int a, int b) {
  return std::abs(geom.ix(a) - geom.ix(b)) + std::abs(geom.iy(a) - geom.iy(b));
}

Geometry rotate_heart(const Geometry& geom, double rotation_deg) {
  Geometry out = geom;
  const double th = rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th);
  const double s = std::sin(th);
  for (auto& p : out.heart_nodes) {
    const double x = c * p.x - s * p.y;
    const double y = s * p.x + c * p.y;
    p.x = x;
    p.y = y;
  }
  return out;
}

TissueMap make_tissue(const Geometry& geom, int scar_center, int scar_radius, double a_healthy,
                      double a_scar) {
  const int n = static_cast<int>(geom.node_count());
  if (scar_center < 0 || scar_center >= n) {
    throw ConfigError("make_tissue: scar_center out of range");
  }
  if (scar_radius < 0) {
    throw ConfigError("make_tissue: scar_radius must be >= 0");
  }
  if (!(a_scar > a_healthy)) {
    throw ConfigError("make_tissue: a_scar must exceed a_healthy");
  }
  TissueMap t;
  t.scar_center = scar_center;
  t.scar_radius = scar_radius;
  t.excitability.assign(geom.node_count(), a_healthy);
  t.scar_mask.assign(geom.node_count(), false);
  for (int i = 0; i < n; ++i) {
    if (lattice_distance(geom, i, scar_center) <= scar_radius) {
      t.scar_mask[static_cast<std::size_t>(i)] = true;
      t.excitability[static_cast<std::size_t>(i)] = a_scar;
    }
  }
  return t;
}

TissueMap healthy_tissue(const Geometry& geom, double a_healthy) {
  TissueMap t;
  t.excitability.assign(geom.node_count(), a_healthy);
  t.scar_mask.assign(geom.node_count(), false);
  return t;
}

Eigen::MatrixXd kernel_matrix(const Geometry& geom, double rotation_deg, double d_min) {
  if (std::abs(rotation_deg) > kMaxRotationDeg) {
    throw ConfigError("rotation of " + std::to_string(rotation_deg) +
                      " degrees exceeds the supported +/-45 range");
  }
  const Geometry rotated = rotation_deg == 0.0 ? geom : rotate_heart(geom, rotation_deg);
  const auto m = static_cast<Eigen::Index>(rotated.lead_count());
  const auto u = static_cast<Eigen::Index>(rotated.node_count());
  Eigen::MatrixXd k(m, u);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& lead = rotated.leads[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < u; ++j) {
      const auto& node = rotated.heart_nodes[static_cast<std::size_t>(j)];
      const double dist = std::hypot(lead.x - node.x, lead.y - node.y, lead.z - node.z);
      k(i, j) = 1.0 / std::max(dist, d_min);
    }
  }
  return k;
}

ForwardOperator build_forward_operator(const Geometry& geom, double rotation_deg, double d_min) {
  ForwardOperator op;
  op.rotation_deg = rotation_deg;
  op.H = kernel_matrix(geom, rotation_deg, d_min);
  for (Eigen::Index i = 0; i < op.H.rows(); ++i) {
    op.H.row(i) /= op.H.row(i).sum();
  }
  return op;
}

}  // namespace vibrec::geo
