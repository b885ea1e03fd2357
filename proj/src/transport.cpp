#include <cmath>
#include <limits>
#include <vector>

#include "mfdl/errors.hpp"
#include "mfdl/posterior_geometry.hpp"

namespace mfdl {

namespace {

double squared_distance(const MatrixXd& U, Index i, const MatrixXd& V, Index j) {
  double s = 0.0;
  for (Index k = 0; k < U.cols(); ++k) {
    const double d = U(i, k) - V(j, k);
    s += d * d;
  }
  return s;
}

MatrixXd cost_matrix(const MatrixXd& U, const MatrixXd& V) {
  MatrixXd C(U.rows(), V.rows());
  for (Index j = 0; j < V.rows(); ++j) {
    for (Index i = 0; i < U.rows(); ++i) C(i, j) = squared_distance(U, i, V, j);
  }
  return C;
}

// Successive shortest paths on the bipartite transport network: each row
// supplies `supply` units, each column absorbs `demand` units.
double min_cost_transport(const MatrixXd& C, std::int64_t supply, std::int64_t demand) {
  const Index n = C.rows(), m = C.cols();
  const Index N = n + m + 2;
  const Index S = n + m, T = n + m + 1;
  std::vector<std::int64_t> flow(static_cast<std::size_t>(n * m), 0);
  std::vector<std::int64_t> left(static_cast<std::size_t>(n), supply);
  std::vector<std::int64_t> need(static_cast<std::size_t>(m), demand);
  std::vector<double> pot(static_cast<std::size_t>(N), 0.0);
  constexpr double kInf = std::numeric_limits<double>::infinity();

  std::int64_t remaining = supply * n;
  while (remaining > 0) {
    // Dense Dijkstra on reduced costs. Node ids: rows 0..n-1, columns n..n+m-1.
    std::vector<double> dist(static_cast<std::size_t>(N), kInf);
    std::vector<Index> prev(static_cast<std::size_t>(N), -1);
    std::vector<bool> done(static_cast<std::size_t>(N), false);
    dist[S] = 0.0;
    for (;;) {
      Index u = -1;
      for (Index v = 0; v < N; ++v) {
        if (!done[v] && dist[v] < kInf && (u < 0 || dist[v] < dist[u])) u = v;
      }
      if (u < 0) break;
      done[u] = true;
      auto relax = [&](Index v, double c) {
        const double nd = dist[u] + std::max(0.0, c + pot[u] - pot[v]);
        if (nd < dist[v]) {
          dist[v] = nd;
          prev[v] = u;
        }
      };
      if (u == S) {
        for (Index i = 0; i < n; ++i) {
          if (left[i] > 0) relax(i, 0.0);
        }
      } else if (u < n) {
        for (Index j = 0; j < m; ++j) relax(n + j, C(u, j));
      } else if (u < n + m) {
        const Index j = u - n;
        if (need[j] > 0) relax(T, 0.0);
        for (Index i = 0; i < n; ++i) {
          if (flow[i + j * n] > 0) relax(i, -C(i, j));
        }
      }
    }
    if (dist[T] == kInf) throw NumericError("transport problem has no feasible augmenting path");
    for (Index v = 0; v < N; ++v) pot[v] += std::min(dist[v], dist[T]);
    // Bottleneck along the path.
    std::int64_t push = remaining;
    for (Index v = T; v != S; v = prev[v]) {
      const Index u = prev[v];
      if (u == S) {
        push = std::min(push, left[v]);
      } else if (v == T) {
        push = std::min(push, need[u - n]);
      } else if (u >= n && u < n + m && v < n) {
        push = std::min(push, flow[v + (u - n) * n]);
      }
    }
    for (Index v = T; v != S; v = prev[v]) {
      const Index u = prev[v];
      if (u == S) {
        left[v] -= push;
      } else if (v == T) {
        need[u - n] -= push;
      } else if (u < n) {
        flow[u + (v - n) * n] += push;
      } else {
        flow[v + (u - n) * n] -= push;
      }
    }
    remaining -= push;
  }
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      if (flow[i + j * n] > 0) total += static_cast<double>(flow[i + j * n]) * C(i, j);
    }
  }
  return total / (static_cast<double>(supply) * static_cast<double>(n));
}

}  // namespace

std::vector<Index> solve_assignment(const MatrixXd& cost) {
  const Index n = cost.rows();
  if (cost.cols() != n) throw ShapeError("assignment needs a square cost matrix");
  if (n == 0) return {};
  // Shortest augmenting path with row/column potentials, 1-based internally.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<Index> p(n + 1, 0), way(n + 1, 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const Index i0 = p[j0];
      double delta = kInf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const Index j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<Index> assignment(static_cast<std::size_t>(n));
  for (Index j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

double wasserstein_point_clouds(const MatrixXd& U, const MatrixXd& V) {
  if (U.rows() < 1 || V.rows() < 1) throw std::invalid_argument("point clouds must be nonempty");
  if (U.cols() != V.cols()) throw ShapeError("point clouds differ in dimension");
  const MatrixXd C = cost_matrix(U, V);
  if (U.rows() == V.rows()) {
    const std::vector<Index> a = solve_assignment(C);
    double total = 0.0;
    for (Index i = 0; i < C.rows(); ++i) total += C(i, a[i]);
    return total / static_cast<double>(C.rows());
  }
  return min_cost_transport(C, V.rows(), U.rows());
}

}  // namespace mfdl
