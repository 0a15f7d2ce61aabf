#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace vibrec::geo {

/// Kernel clamp distance in lattice units.
inline constexpr double kMinDistance = 0.1;
/// Rotations beyond this magnitude are rejected.
inline constexpr double kMaxRotationDeg = 45.0;

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// Planar lattice heart at z=0 inside a ring of surface leads.
///
/// Node index is `iy * nx + ix`. Coordinates are unit-spaced and centered on
/// the origin. The adjacency lists are the 4-neighbour lattice graph, sorted.
struct Geometry {
  int nx = 0;
  int ny = 0;
  double ring_radius = 0.0;
  std::vector<Point3> heart_nodes;
  std::vector<Point3> leads;
  std::vector<std::vector<int>> adjacency;

  std::size_t node_count() const { return heart_nodes.size(); }
  std::size_t lead_count() const { return leads.size(); }
  int ix(int node) const { return node % nx; }
  int iy(int node) const { return node / nx; }
};

Geometry build_grid(int nx, int ny, int lead_count, double ring_radius);

/// Manhattan distance between two lattice nodes (graph distance on the
/// 4-neighbour lattice).
int lattice_distance(const Geometry& geom, int a, int b);

/// Returns a copy with every heart node rotated about the Z axis.
Geometry rotate_heart(const Geometry& geom, double rotation_deg);

struct TissueMap {
  std::vector<double> excitability;
  std::vector<bool> scar_mask;
  int scar_center = -1;
  int scar_radius = 0;
};

TissueMap make_tissue(const Geometry& geom, int scar_center, int scar_radius, double a_healthy,
                      double a_scar);

/// A tissue map with no scar.
TissueMap healthy_tissue(const Geometry& geom, double a_healthy);

struct ForwardOperator {
  Eigen::MatrixXd H;  // leads x nodes
  double rotation_deg = 0.0;
};

/// Unnormalised inverse-distance kernel k_ij = 1 / max(|lead_i - node_j|, d_min)
/// after rotating the heart by `rotation_deg`.
Eigen::MatrixXd kernel_matrix(const Geometry& geom, double rotation_deg,
                              double d_min = kMinDistance);

/// Row-normalised kernel: rows are nonnegative and sum to one.
ForwardOperator build_forward_operator(const Geometry& geom, double rotation_deg,
                                       double d_min = kMinDistance);

}  // namespace vibrec::geo
