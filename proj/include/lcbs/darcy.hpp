#pragma once

#include "lcbs/core.hpp"
#include "lcbs/random.hpp"
#include "lcbs/targets.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace lcbs {

struct KLMode {
  std::array<int, 2> k;
  double lambda;
  double c;
};

/// Truncated Karhunen-Loeve basis of the log-permeability, modes sorted by
/// decreasing eigenvalue with ties broken lexicographically in k.
struct KLBasis {
  double tau = 3.0;
  double s = 2.0;
  std::vector<KLMode> modes;

  Index dim() const { return static_cast<Index>(modes.size()); }
};

inline double kl_eigenvalue(const std::array<int, 2> &k, double tau, double s) {
  const double pi2 = std::numbers::pi * std::numbers::pi;
  return std::pow(pi2 * (k[0] * k[0] + k[1] * k[1]) + tau * tau, -s);
}

inline constexpr int kKlSearchMax = 64;

inline KLBasis kl_eigenpairs(double tau, double s, Index d) {
  if (d < 1) {
    throw UsageError("KL basis needs d >= 1");
  }
  if (!(s > 0.0)) {
    throw UsageError("KL decay exponent must be positive");
  }
  for (int kmax = kKlSearchMax;; kmax *= 2) {
    std::vector<KLMode> all;
    for (int a = 0; a <= kmax; ++a) {
      for (int b = 0; b <= kmax; ++b) {
        if (a == 0 && b == 0) {
          continue;
        }
        all.push_back({{a, b}, kl_eigenvalue({a, b}, tau, s),
                       a * b == 0 ? std::numbers::sqrt2 : 2.0});
      }
    }
    std::sort(all.begin(), all.end(), [](const KLMode &x, const KLMode &y) {
      if (x.lambda != y.lambda) {
        return x.lambda > y.lambda;
      }
      return x.k < y.k;
    });
    // Any mode outside the search box has |k| > kmax.
    const double outside = kl_eigenvalue({kmax + 1, 0}, tau, s);
    if (static_cast<std::size_t>(d) < all.size() &&
        all[static_cast<std::size_t>(d) - 1].lambda > outside) {
      all.resize(static_cast<std::size_t>(d));
      return KLBasis{tau, s, std::move(all)};
    }
  }
}

inline double kl_mode_value(const KLMode &m, double x1, double x2) {
  return m.c * std::cos(std::numbers::pi * m.k[0] * x1) *
         std::cos(std::numbers::pi * m.k[1] * x2);
}

/// sum_k u_k sqrt(lambda_k) phi_k(x).
inline double log_permeability(const KLBasis &basis, const Eigen::Ref<const Vector> &u,
                               double x1, double x2) {
  if (u.size() != basis.dim()) {
    throw UsageError("log_permeability: coefficient vector has wrong length");
  }
  double acc = 0.0;
  for (Index k = 0; k < u.size(); ++k) {
    const auto &m = basis.modes[static_cast<std::size_t>(k)];
    acc += u(k) * std::sqrt(m.lambda) * kl_mode_value(m, x1, x2);
  }
  return acc;
}

inline constexpr int kDarcyDirectMaxLevel = 5;
inline constexpr double kDarcyCgTolerance = 1e-10;

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

/// Five-point flux-form finite differences for -div(a grad p) = f on the
/// unit square with p = 0 on the boundary, mesh width 2^-level. Grid
/// functions are (M+1) x (M+1) node arrays, entry (i, j) at (i h, j h).
class DarcySolver {
public:
  DarcySolver(KLBasis basis, int level) : basis_(std::move(basis)), level_(level) {
    if (level < 1 || level > 12) {
      throw UsageError("Darcy grid level must lie in [1, 12]");
    }
    m_ = 1 << level;
    const Index n = nodes();
    cos1_.resize(basis_.modes.size());
    cos2_.resize(basis_.modes.size());
    for (std::size_t k = 0; k < basis_.modes.size(); ++k) {
      const auto &mode = basis_.modes[k];
      cos1_[k].resize(n);
      cos2_[k].resize(n);
      for (Index i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) * h();
        cos1_[k](i) = std::cos(std::numbers::pi * mode.k[0] * x);
        cos2_[k](i) = std::cos(std::numbers::pi * mode.k[1] * x);
      }
    }
    build_pattern();
  }

  const KLBasis &basis() const { return basis_; }
  int level() const { return level_; }
  double h() const { return 1.0 / static_cast<double>(m_); }
  /// Nodes per side, boundary included.
  Index nodes() const { return m_ + 1; }
  Index unknowns() const { return (m_ - 1) * (m_ - 1); }

  Matrix log_permeability_grid(const Eigen::Ref<const Vector> &u) const {
    if (u.size() != basis_.dim()) {
      throw UsageError("Darcy: coefficient vector has wrong length");
    }
    Matrix out = Matrix::Zero(nodes(), nodes());
    for (std::size_t k = 0; k < basis_.modes.size(); ++k) {
      const double coef = u(static_cast<Index>(k)) * std::sqrt(basis_.modes[k].lambda) *
                          basis_.modes[k].c;
      out.noalias() += coef * cos1_[k] * cos2_[k].transpose();
    }
    return out;
  }

  Matrix solve(const Eigen::Ref<const Vector> &u, double f_const) const {
    return solve_log_permeability(log_permeability_grid(u), constant_source(f_const));
  }

  template <typename Source>
  Matrix solve(const Eigen::Ref<const Vector> &u, const Source &f) const {
    return solve_log_permeability(log_permeability_grid(u), source_grid(f));
  }

  Matrix constant_source(double f) const { return Matrix::Constant(nodes(), nodes(), f); }

  template <typename Source> Matrix source_grid(const Source &f) const {
    Matrix out(nodes(), nodes());
    for (Index i = 0; i < nodes(); ++i) {
      for (Index j = 0; j < nodes(); ++j) {
        out(i, j) = f(static_cast<double>(i) * h(), static_cast<double>(j) * h());
      }
    }
    return out;
  }

  /// Face coefficients are geometric means of the nodal permeabilities.
  Matrix solve_log_permeability(const Matrix &loga, const Matrix &f) const {
    if (loga.rows() != nodes() || loga.cols() != nodes() || f.rows() != nodes() ||
        f.cols() != nodes()) {
      throw UsageError("Darcy: grid function has wrong shape");
    }
    if (!loga.allFinite()) {
      throw ConvergenceError("Darcy: non-finite permeability");
    }
    const Matrix root = (0.5 * loga.array()).exp();
    const double *r = root.data();
    Workspace ws = acquire();
    double *val = ws.a.valuePtr();
    const double inv_h2 = 1.0 / (h() * h());
    for (std::size_t p = 0; p < slots_.size(); ++p) {
      const Slot &s = slots_[p];
      if (s.diag) {
        val[p] = r[s.node] * (r[s.nb[0]] + r[s.nb[1]] + r[s.nb[2]] + r[s.nb[3]]) * inv_h2;
      } else {
        val[p] = -r[s.node] * r[s.nb[0]] * inv_h2;
      }
    }
    Vector rhs(unknowns());
    for (Index j = 1; j < m_; ++j) {
      for (Index i = 1; i < m_; ++i) {
        rhs(index(i, j)) = f(i, j);
      }
    }
    Vector x;
    if (level_ <= kDarcyDirectMaxLevel) {
      ws.llt->factorize(ws.a);
      if (ws.llt->info() != Eigen::Success) {
        release(std::move(ws));
        throw ConvergenceError("Darcy: sparse factorization failed");
      }
      x = ws.llt->solve(rhs);
    } else {
      Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower,
                               Eigen::DiagonalPreconditioner<double>>
          cg;
      cg.setTolerance(kDarcyCgTolerance);
      cg.setMaxIterations(static_cast<Index>(20 * m_ * m_));
      cg.compute(ws.a);
      x = cg.solve(rhs);
      if (cg.info() != Eigen::Success) {
        release(std::move(ws));
        throw ConvergenceError("Darcy: conjugate gradient did not converge");
      }
    }
    release(std::move(ws));
    Matrix p = Matrix::Zero(nodes(), nodes());
    for (Index j = 1; j < m_; ++j) {
      for (Index i = 1; i < m_; ++i) {
        p(i, j) = x(index(i, j));
      }
    }
    return p;
  }

  /// System matrix for a given nodal log-permeability (for inspection).
  SparseMatrix system_matrix(const Matrix &loga) const {
    std::vector<Eigen::Triplet<double>> t;
    const double inv_h2 = 1.0 / (h() * h());
    for (Index j = 1; j < m_; ++j) {
      for (Index i = 1; i < m_; ++i) {
        const Index r = index(i, j);
        double diag = 0.0;
        for (const auto &nb : neighbors(i, j)) {
          const double face = std::exp(0.5 * (loga(i, j) + loga(nb[0], nb[1])));
          diag += face;
          if (interior(nb[0], nb[1])) {
            t.emplace_back(r, index(nb[0], nb[1]), -face * inv_h2);
          }
        }
        t.emplace_back(r, r, diag * inv_h2);
      }
    }
    SparseMatrix a(unknowns(), unknowns());
    a.setFromTriplets(t.begin(), t.end());
    return a;
  }

private:
  using Direct = Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;

  // Flat column-major node offsets into the nodal grid.
  struct Slot {
    Index node;
    bool diag;
    std::array<Index, 4> nb;
  };

  struct Workspace {
    SparseMatrix a;
    std::unique_ptr<Direct> llt;
  };

  Index index(Index i, Index j) const { return (j - 1) * (m_ - 1) + (i - 1); }
  Index flat(Index i, Index j) const { return j * (m_ + 1) + i; }
  bool interior(Index i, Index j) const { return i > 0 && j > 0 && i < m_ && j < m_; }

  std::array<std::array<Index, 2>, 4> neighbors(Index i, Index j) const {
    return {{{i + 1, j}, {i - 1, j}, {i, j + 1}, {i, j - 1}}};
  }

  /// Lower-triangular pattern plus, for every stored value, the recipe to
  /// compute it from the nodal log-permeability.
  void build_pattern() {
    std::vector<Eigen::Triplet<double>> t;
    for (Index j = 1; j < m_; ++j) {
      for (Index i = 1; i < m_; ++i) {
        const Index r = index(i, j);
        t.emplace_back(r, r, 1.0);
        for (const auto &nb : neighbors(i, j)) {
          if (interior(nb[0], nb[1]) && index(nb[0], nb[1]) > r) {
            t.emplace_back(index(nb[0], nb[1]), r, 1.0);
          }
        }
      }
    }
    pattern_.resize(unknowns(), unknowns());
    pattern_.setFromTriplets(t.begin(), t.end());
    pattern_.makeCompressed();
    std::vector<std::array<Index, 2>> node_of(static_cast<std::size_t>(unknowns()));
    for (Index j = 1; j < m_; ++j) {
      for (Index i = 1; i < m_; ++i) {
        node_of[static_cast<std::size_t>(index(i, j))] = {i, j};
      }
    }
    slots_.resize(static_cast<std::size_t>(pattern_.nonZeros()));
    for (Index col = 0; col < pattern_.outerSize(); ++col) {
      for (SparseMatrix::InnerIterator it(pattern_, col); it; ++it) {
        const auto p = static_cast<std::size_t>(&it.valueRef() - pattern_.valuePtr());
        const auto [ci, cj] = node_of[static_cast<std::size_t>(col)];
        Slot s{flat(ci, cj), it.row() == col, {}};
        if (s.diag) {
          const auto nb = neighbors(ci, cj);
          for (std::size_t q = 0; q < 4; ++q) {
            s.nb[q] = flat(nb[q][0], nb[q][1]);
          }
        } else {
          const auto [ri, rj] = node_of[static_cast<std::size_t>(it.row())];
          s.nb[0] = flat(ri, rj);
        }
        slots_[p] = s;
      }
    }
  }

  Workspace acquire() const {
    {
      std::lock_guard<std::mutex> lock(*pool_mutex_);
      if (!pool_->empty()) {
        Workspace w = std::move(pool_->back());
        pool_->pop_back();
        return w;
      }
    }
    Workspace w;
    w.a = pattern_;
    if (level_ <= kDarcyDirectMaxLevel) {
      w.llt = std::make_unique<Direct>();
      w.llt->analyzePattern(w.a);
    }
    return w;
  }

  void release(Workspace w) const {
    std::lock_guard<std::mutex> lock(*pool_mutex_);
    pool_->push_back(std::move(w));
  }

  KLBasis basis_;
  int level_;
  Index m_ = 0;
  std::vector<Vector> cos1_, cos2_;
  SparseMatrix pattern_;
  std::vector<Slot> slots_;
  std::shared_ptr<std::mutex> pool_mutex_ = std::make_shared<std::mutex>();
  std::shared_ptr<std::vector<Workspace>> pool_ =
      std::make_shared<std::vector<Workspace>>();
};

inline Matrix solve_pressure(const KLBasis &basis, const Eigen::Ref<const Vector> &u,
                             double f_const, int level) {
  return DarcySolver(basis, level).solve(u, f_const);
}

inline constexpr int kObservationsPerSide = 7;

/// Pressure at the 7 x 7 lattice (i/8, j/8), 1 <= i, j <= 7; entry
/// 7 (j - 1) + (i - 1) holds the point (i/8, j/8).
inline Vector observe(const Matrix &p) {
  const Index m = p.rows() - 1;
  if (p.rows() != p.cols() || m < 8 || m % 8 != 0) {
    throw UsageError("observe: grid does not contain the observation lattice");
  }
  const Index stride = m / 8;
  Vector y(kObservationsPerSide * kObservationsPerSide);
  for (Index j = 1; j <= kObservationsPerSide; ++j) {
    for (Index i = 1; i <= kObservationsPerSide; ++i) {
      y(kObservationsPerSide * (j - 1) + (i - 1)) = p(i * stride, j * stride);
    }
  }
  return y;
}

inline constexpr double kDarcyNoiseVariance = 1e-4;
inline constexpr double kDarcySource = 10.0;

struct DarcyProblem {
  KLBasis basis;
  int data_level = 9;
  double f_const = kDarcySource;
  double noise_variance = kDarcyNoiseVariance;
  std::uint64_t seed = 0;
  Vector u_true;
  Vector y_clean;
  Vector y;

  Matrix noise_cov() const {
    return noise_variance * Matrix::Identity(y.size(), y.size());
  }
  Matrix prior_cov() const { return Matrix::Identity(basis.dim(), basis.dim()); }
};

/// Draws u* from N(0, I), solves on the data grid, observes and adds
/// N(0, noise_variance I) noise.
inline DarcyProblem generate_synthetic_data(const KLBasis &basis, std::uint64_t seed,
                                            int data_level = 9,
                                            double f_const = kDarcySource,
                                            double noise_variance = kDarcyNoiseVariance) {
  if (!(noise_variance >= 0.0)) {
    throw UsageError("noise variance must be nonnegative");
  }
  DarcyProblem prob;
  prob.basis = basis;
  prob.data_level = data_level;
  prob.f_const = f_const;
  prob.noise_variance = noise_variance;
  prob.seed = seed;
  RandomStream rng(seed, 0, 0, 0, DrawKind::Data);
  prob.u_true.resize(basis.dim());
  rng.fill_normal(prob.u_true);
  prob.y_clean = observe(DarcySolver(basis, data_level).solve(prob.u_true, f_const));
  Vector noise(prob.y_clean.size());
  rng.fill_normal(noise);
  prob.y = prob.y_clean + std::sqrt(noise_variance) * noise;
  return prob;
}

/// Posterior exp(-|y - G(u)|^2_Gamma / 2 - |u|^2 / 2) with G solving on
/// the model grid. Gradient-free.
inline TargetDensity make_darcy_posterior(const DarcyProblem &prob, int model_level) {
  if (prob.y.size() != kObservationsPerSide * kObservationsPerSide) {
    throw UsageError("Darcy problem has no data");
  }
  auto solver = std::make_shared<const DarcySolver>(prob.basis, model_level);
  const double f = prob.f_const;
  TargetDensity t = bip_posterior(
      [solver, f](const Eigen::Ref<const Vector> &u) -> Vector {
        try {
          return observe(solver->solve(u, f));
        } catch (const ConvergenceError &) {
          return Vector::Constant(kObservationsPerSide * kObservationsPerSide,
                                  std::numeric_limits<double>::quiet_NaN());
        }
      },
      prob.y, prob.noise_cov(), prob.prior_cov());
  t.name = "darcy-" + std::to_string(prob.basis.dim());
  return t;
}

/// Max-norm errors against p = sin(pi x) sin(pi y) for a = 1 and
/// f = 2 pi^2 sin(pi x) sin(pi y), one per level.
inline std::vector<double> manufactured_solution_errors(const std::vector<int> &levels) {
  const double pi = std::numbers::pi;
  std::vector<double> out;
  for (int level : levels) {
    const DarcySolver solver(kl_eigenpairs(3.0, 2.0, 1), level);
    const Matrix p = solver.solve(Vector::Zero(1), [pi](double x, double y) {
      return 2.0 * pi * pi * std::sin(pi * x) * std::sin(pi * y);
    });
    double err = 0.0;
    for (Index i = 0; i < solver.nodes(); ++i) {
      for (Index j = 0; j < solver.nodes(); ++j) {
        const double exact =
            std::sin(pi * static_cast<double>(i) * solver.h()) *
            std::sin(pi * static_cast<double>(j) * solver.h());
        err = std::max(err, std::abs(p(i, j) - exact));
      }
    }
    out.push_back(err);
  }
  return out;
}

// Serialization: problem.csv (index,y,y_clean), truth.csv (index,u_true)
// and problem_meta.txt (key=value).

inline std::map<std::string, std::string> serialize_problem(const DarcyProblem &prob) {
  std::ostringstream data, truth, meta;
  data << std::setprecision(17) << "index,y,y_clean\n";
  for (Index k = 0; k < prob.y.size(); ++k) {
    data << k << ',' << prob.y(k) << ',' << prob.y_clean(k) << '\n';
  }
  truth << std::setprecision(17) << "index,u_true\n";
  for (Index k = 0; k < prob.u_true.size(); ++k) {
    truth << k << ',' << prob.u_true(k) << '\n';
  }
  meta << std::setprecision(17) << "seed=" << prob.seed << '\n'
       << "dim=" << prob.basis.dim() << '\n'
       << "tau=" << prob.basis.tau << '\n'
       << "s=" << prob.basis.s << '\n'
       << "data_level=" << prob.data_level << '\n'
       << "f_const=" << prob.f_const << '\n'
       << "noise_variance=" << prob.noise_variance << '\n';
  return {{"problem.csv", data.str()},
          {"truth.csv", truth.str()},
          {"problem_meta.txt", meta.str()}};
}

inline void write_problem(const DarcyProblem &prob, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  for (const auto &[name, text] : serialize_problem(prob)) {
    std::ofstream out(dir / name, std::ios::binary);
    out << text;
    if (!out) {
      throw Error("failed to write " + (dir / name).string());
    }
  }
}

inline DarcyProblem read_problem(const std::filesystem::path &dir) {
  std::ifstream meta(dir / "problem_meta.txt");
  if (!meta) {
    throw UsageError("missing " + (dir / "problem_meta.txt").string());
  }
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) {
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  auto need = [&](const std::string &key) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
      throw UsageError("Darcy metadata lacks '" + key + "'");
    }
    return it->second;
  };
  DarcyProblem prob;
  prob.basis = kl_eigenpairs(std::stod(need("tau")), std::stod(need("s")),
                             std::stol(need("dim")));
  prob.seed = std::stoull(need("seed"));
  prob.data_level = std::stoi(need("data_level"));
  prob.f_const = std::stod(need("f_const"));
  prob.noise_variance = std::stod(need("noise_variance"));
  auto read_columns = [&](const std::string &name, std::size_t ncols) {
    std::ifstream in(dir / name);
    if (!in) {
      throw UsageError("missing " + (dir / name).string());
    }
    std::getline(in, line);
    std::vector<std::vector<double>> cols(ncols);
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string cell;
      std::getline(ss, cell, ',');
      for (std::size_t c = 0; c < ncols; ++c) {
        std::getline(ss, cell, ',');
        cols[c].push_back(std::stod(cell));
      }
    }
    return cols;
  };
  const auto data = read_columns("problem.csv", 2);
  const auto truth = read_columns("truth.csv", 1);
  prob.y = Eigen::Map<const Vector>(data[0].data(), static_cast<Index>(data[0].size()));
  prob.y_clean =
      Eigen::Map<const Vector>(data[1].data(), static_cast<Index>(data[1].size()));
  prob.u_true =
      Eigen::Map<const Vector>(truth[0].data(), static_cast<Index>(truth[0].size()));
  return prob;
}

} // namespace lcbs
