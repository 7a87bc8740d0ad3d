#include "devilstick/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "devilstick/error.hpp"

namespace devilstick {

const char* toString(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::SingularMatrix: return "SingularMatrix";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::NotStabilizable: return "NotStabilizable";
    case ErrorCode::NotControllable: return "NotControllable";
    case ErrorCode::SingularVhc: return "SingularVhc";
    case ErrorCode::DegenerateForce: return "DegenerateForce";
    case ErrorCode::BelowPotential: return "BelowPotential";
    case ErrorCode::NotPropeller: return "NotPropeller";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::NoCrossing: return "NoCrossing";
    case ErrorCode::EpisodeTimeout: return "EpisodeTimeout";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

namespace numerics {

namespace {

void requireSameShape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream os;
    os << op << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
       << b.cols();
    throw Error(ErrorCode::InvalidArgument, os.str());
  }
}

void requireSquare(const Matrix& a, const char* op) {
  if (!a.isSquare() || a.rows() == 0) {
    throw Error(ErrorCode::InvalidArgument, std::string(op) + ": matrix must be square");
  }
}

// In-place LU with partial pivoting. Returns the permutation sign.
int luDecompose(Matrix& lu, std::vector<std::size_t>& perm) {
  const std::size_t n = lu.rows();
  perm.resize(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  int sign = 1;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    double best = std::abs(lu(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(lu(i, k)) > best) {
        best = std::abs(lu(i, k));
        pivot = i;
      }
    }
    if (best < kPivotFloor) {
      std::ostringstream os;
      os << "pivot " << best << " in column " << k;
      throw Error(ErrorCode::SingularMatrix, os.str());
    }
    if (pivot != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(pivot, j));
      std::swap(perm[k], perm[pivot]);
      sign = -sign;
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = lu(i, k) / lu(k, k);
      lu(i, k) = f;
      for (std::size_t j = k + 1; j < n; ++j) lu(i, j) -= f * lu(k, j);
    }
  }
  return sign;
}

Vector luSolve(const Matrix& lu, const std::vector<std::size_t>& perm, std::span<const double> b) {
  const std::size_t n = lu.rows();
  Vector x(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[perm[i]];
    for (std::size_t j = 0; j < i; ++j) s -= lu(i, j) * x[j];
    x[i] = s;
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = x[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= lu(i, j) * x[j];
    x[i] = s / lu(i, i);
  }
  return x;
}

// 1-based view over a 0-based Matrix; the QR routines below follow the
// classic EISPACK index conventions and read much better that way.
struct OneBased {
  Matrix& m;
  double& operator()(int i, int j) { return m(static_cast<std::size_t>(i - 1), static_cast<std::size_t>(j - 1)); }
};

void balance(Matrix& mat) {
  constexpr double kRadix = 2.0;
  constexpr double kRadixSq = kRadix * kRadix;
  const int n = static_cast<int>(mat.rows());
  OneBased a{mat};
  bool done = false;
  while (!done) {
    done = true;
    for (int i = 1; i <= n; ++i) {
      double r = 0.0;
      double c = 0.0;
      for (int j = 1; j <= n; ++j) {
        if (j != i) {
          c += std::abs(a(j, i));
          r += std::abs(a(i, j));
        }
      }
      if (c != 0.0 && r != 0.0) {
        double g = r / kRadix;
        double f = 1.0;
        const double s = c + r;
        while (c < g) {
          f *= kRadix;
          c *= kRadixSq;
        }
        g = r * kRadix;
        while (c > g) {
          f /= kRadix;
          c /= kRadixSq;
        }
        if ((c + r) / f < 0.95 * s) {
          done = false;
          g = 1.0 / f;
          for (int j = 1; j <= n; ++j) a(i, j) *= g;
          for (int j = 1; j <= n; ++j) a(j, i) *= f;
        }
      }
    }
  }
}

// Reduction to upper Hessenberg form by stabilized elementary similarity
// transforms. Everything below the subdiagonal is zeroed on return.
void toHessenberg(Matrix& mat) {
  const int n = static_cast<int>(mat.rows());
  OneBased a{mat};
  for (int m = 2; m < n; ++m) {
    double x = 0.0;
    int i = m;
    for (int j = m; j <= n; ++j) {
      if (std::abs(a(j, m - 1)) > std::abs(x)) {
        x = a(j, m - 1);
        i = j;
      }
    }
    if (i != m) {
      for (int j = m - 1; j <= n; ++j) std::swap(a(i, j), a(m, j));
      for (int j = 1; j <= n; ++j) std::swap(a(j, i), a(j, m));
    }
    if (x != 0.0) {
      for (i = m + 1; i <= n; ++i) {
        double y = a(i, m - 1);
        if (y != 0.0) {
          y /= x;
          a(i, m - 1) = y;
          for (int j = m; j <= n; ++j) a(i, j) -= y * a(m, j);
          for (int j = 1; j <= n; ++j) a(j, m) += y * a(j, i);
        }
      }
    }
  }
  for (int i = 3; i <= n; ++i)
    for (int j = 1; j <= i - 2; ++j) a(i, j) = 0.0;
}

double signOf(double magnitude, double sign) { return sign >= 0.0 ? std::abs(magnitude) : -std::abs(magnitude); }

// Francis double-shift QR on an upper Hessenberg matrix.
std::vector<std::complex<double>> hessenbergQr(Matrix& mat, std::size_t maxSweeps) {
  const int n = static_cast<int>(mat.rows());
  OneBased a{mat};
  std::vector<double> wr(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> wi(static_cast<std::size_t>(n) + 1, 0.0);

  double anorm = 0.0;
  for (int i = 1; i <= n; ++i)
    for (int j = std::max(i - 1, 1); j <= n; ++j) anorm += std::abs(a(i, j));

  std::size_t sweeps = 0;
  int nn = n;
  double t = 0.0;
  double p = 0.0, q = 0.0, r = 0.0, s = 0.0, w = 0.0, x = 0.0, y = 0.0, z = 0.0;
  while (nn >= 1) {
    int its = 0;
    int l = 0;
    do {
      for (l = nn; l >= 2; --l) {
        s = std::abs(a(l - 1, l - 1)) + std::abs(a(l, l));
        if (s == 0.0) s = anorm;
        if (std::abs(a(l, l - 1)) + s == s) {
          a(l, l - 1) = 0.0;
          break;
        }
      }
      x = a(nn, nn);
      if (l == nn) {
        wr[nn] = x + t;
        wi[nn] = 0.0;
        --nn;
      } else {
        y = a(nn - 1, nn - 1);
        w = a(nn, nn - 1) * a(nn - 1, nn);
        if (l == nn - 1) {
          p = 0.5 * (y - x);
          q = p * p + w;
          z = std::sqrt(std::abs(q));
          x += t;
          if (q >= 0.0) {
            z = p + signOf(z, p);
            wr[nn - 1] = wr[nn] = x + z;
            if (z != 0.0) wr[nn] = x - w / z;
            wi[nn - 1] = wi[nn] = 0.0;
          } else {
            wr[nn - 1] = wr[nn] = x + p;
            wi[nn - 1] = -z;
            wi[nn] = z;
          }
          nn -= 2;
        } else {
          if (++sweeps > maxSweeps) {
            std::ostringstream os;
            os << "QR iteration exceeded " << maxSweeps << " sweeps";
            throw Error(ErrorCode::NoConvergence, os.str());
          }
          if (its > 0 && its % 10 == 0) {
            // exceptional shift
            t += x;
            for (int i = 1; i <= nn; ++i) a(i, i) -= x;
            s = std::abs(a(nn, nn - 1)) + std::abs(a(nn - 1, nn - 2));
            y = x = 0.75 * s;
            w = -0.4375 * s * s;
          }
          ++its;
          int m = nn - 2;
          for (; m >= l; --m) {
            z = a(m, m);
            r = x - z;
            s = y - z;
            p = (r * s - w) / a(m + 1, m) + a(m, m + 1);
            q = a(m + 1, m + 1) - z - r - s;
            r = a(m + 2, m + 1);
            s = std::abs(p) + std::abs(q) + std::abs(r);
            p /= s;
            q /= s;
            r /= s;
            if (m == l) break;
            const double u = std::abs(a(m, m - 1)) * (std::abs(q) + std::abs(r));
            const double v = std::abs(p) * (std::abs(a(m - 1, m - 1)) + std::abs(z) + std::abs(a(m + 1, m + 1)));
            if (u + v == v) break;
          }
          for (int i = m + 2; i <= nn; ++i) {
            a(i, i - 2) = 0.0;
            if (i != m + 2) a(i, i - 3) = 0.0;
          }
          for (int k = m; k <= nn - 1; ++k) {
            if (k != m) {
              p = a(k, k - 1);
              q = a(k + 1, k - 1);
              r = 0.0;
              if (k != nn - 1) r = a(k + 2, k - 1);
              x = std::abs(p) + std::abs(q) + std::abs(r);
              if (x != 0.0) {
                p /= x;
                q /= x;
                r /= x;
              }
            }
            s = signOf(std::sqrt(p * p + q * q + r * r), p);
            if (s != 0.0) {
              if (k == m) {
                if (l != m) a(k, k - 1) = -a(k, k - 1);
              } else {
                a(k, k - 1) = -s * x;
              }
              p += s;
              x = p / s;
              y = q / s;
              z = r / s;
              q /= p;
              r /= p;
              for (int j = k; j <= nn; ++j) {
                p = a(k, j) + q * a(k + 1, j);
                if (k != nn - 1) {
                  p += r * a(k + 2, j);
                  a(k + 2, j) -= p * z;
                }
                a(k + 1, j) -= p * y;
                a(k, j) -= p * x;
              }
              const int mmin = nn < k + 3 ? nn : k + 3;
              for (int i = l; i <= mmin; ++i) {
                p = x * a(i, k) + y * a(i, k + 1);
                if (k != nn - 1) {
                  p += z * a(i, k + 2);
                  a(i, k + 2) -= p * r;
                }
                a(i, k + 1) -= p * q;
                a(i, k) -= p;
              }
            }
          }
        }
      }
    } while (l < nn - 1);
  }

  std::vector<std::complex<double>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 1; i <= n; ++i) out.emplace_back(wr[i], wi[i]);
  return out;
}

Matrix riccatiRhs(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r, const Matrix& p) {
  const Matrix at = a.transpose();
  const Matrix bt = b.transpose();
  const Matrix btpa = bt * p * a;
  const Matrix gain = solveLinear(r + bt * p * b, btpa);
  return at * p * a - (at * p * b) * gain + q;
}

void symmetrize(Matrix& p) {
  for (std::size_t i = 0; i < p.rows(); ++i) {
    for (std::size_t j = i + 1; j < p.cols(); ++j) {
      const double avg = 0.5 * (p(i, j) + p(j, i));
      p(i, j) = avg;
      p(j, i) = avg;
    }
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& row : rows) {
    if (row.size() != cols_) throw Error(ErrorCode::InvalidArgument, "ragged matrix initializer");
    data_.insert(data_.end(), row.begin(), row.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
  Matrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

Matrix Matrix::columnVector(std::span<const double> v) {
  Matrix m(v.size(), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(i, 0) = v[i];
  return m;
}

Matrix Matrix::rowVector(std::span<const double> v) {
  Matrix m(1, v.size());
  for (std::size_t i = 0; i < v.size(); ++i) m(0, i) = v[i];
  return m;
}

Vector Matrix::column(std::size_t c) const {
  Vector v(rows_);
  for (std::size_t i = 0; i < rows_; ++i) v[i] = (*this)(i, c);
  return v;
}

Vector Matrix::row(std::size_t r) const {
  return Vector(data_.begin() + static_cast<std::ptrdiff_t>(r * cols_),
                data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols_));
}

void Matrix::setColumn(std::size_t c, std::span<const double> v) {
  if (v.size() != rows_) throw Error(ErrorCode::InvalidArgument, "setColumn: length mismatch");
  for (std::size_t i = 0; i < rows_; ++i) (*this)(i, c) = v[i];
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

double Matrix::normInf() const {
  double best = 0.0;
  for (std::size_t i = 0; i < rows_; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols_; ++j) s += std::abs((*this)(i, j));
    best = std::max(best, s);
  }
  return best;
}

double Matrix::maxAbs() const {
  double best = 0.0;
  for (double v : data_) best = std::max(best, std::abs(v));
  return best;
}

bool Matrix::allFinite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix& Matrix::operator+=(const Matrix& o) {
  requireSameShape(*this, o, "operator+");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
  requireSameShape(*this, o, "operator-");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error(ErrorCode::InvalidArgument, "operator*: inner dimension mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

Vector operator*(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw Error(ErrorCode::InvalidArgument, "operator*: vector length mismatch");
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) y[i] += a(i, j) * x[j];
  return y;
}

double normInf(std::span<const double> v) {
  double best = 0.0;
  for (double x : v) best = std::max(best, std::abs(x));
  return best;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vector solveLinear(const Matrix& a, std::span<const double> b) {
  requireSquare(a, "solveLinear");
  if (b.size() != a.rows()) throw Error(ErrorCode::InvalidArgument, "solveLinear: rhs length mismatch");
  Matrix lu = a;
  std::vector<std::size_t> perm;
  luDecompose(lu, perm);
  return luSolve(lu, perm, b);
}

Matrix solveLinear(const Matrix& a, const Matrix& b) {
  requireSquare(a, "solveLinear");
  if (b.rows() != a.rows()) throw Error(ErrorCode::InvalidArgument, "solveLinear: rhs rows mismatch");
  Matrix lu = a;
  std::vector<std::size_t> perm;
  luDecompose(lu, perm);
  Matrix x(b.rows(), b.cols());
  for (std::size_t c = 0; c < b.cols(); ++c) {
    const Vector col = b.column(c);
    x.setColumn(c, luSolve(lu, perm, col));
  }
  return x;
}

double determinant(const Matrix& a) {
  requireSquare(a, "determinant");
  Matrix lu = a;
  std::vector<std::size_t> perm;
  int sign = 0;
  try {
    sign = luDecompose(lu, perm);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SingularMatrix) return 0.0;
    throw;
  }
  double det = sign;
  for (std::size_t i = 0; i < lu.rows(); ++i) det *= lu(i, i);
  return det;
}

std::vector<std::complex<double>> eigenvaluesDense(const Matrix& a, std::size_t maxSweeps) {
  requireSquare(a, "eigenvaluesDense");
  if (!a.allFinite()) throw Error(ErrorCode::InvalidArgument, "eigenvaluesDense: non-finite entry");
  const std::size_t n = a.rows();
  if (maxSweeps == 0) maxSweeps = 100 * n * n;
  Matrix h = a;
  balance(h);
  toHessenberg(h);
  return hessenbergQr(h, maxSweeps);
}

double spectralRadius(const Matrix& a) {
  double rho = 0.0;
  for (const auto& lambda : eigenvaluesDense(a)) rho = std::max(rho, std::abs(lambda));
  return rho;
}

Vector singularValues(const Matrix& a) {
  Matrix u = a.rows() >= a.cols() ? a : a.transpose();
  const std::size_t m = u.rows();
  const std::size_t n = u.cols();
  constexpr double kTol = 1e-15;
  for (int sweep = 0; sweep < 100; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += u(i, p) * u(i, p);
          beta += u(i, q) * u(i, q);
          gamma += u(i, p) * u(i, q);
        }
        if (std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double up = u(i, p);
          const double uq = u(i, q);
          u(i, p) = c * up - s * uq;
          u(i, q) = s * up + c * uq;
        }
      }
    }
    if (!rotated) break;
  }
  Vector sv(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += u(i, j) * u(i, j);
    sv[j] = std::sqrt(s);
  }
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

double dareResidual(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r, const Matrix& p) {
  return (riccatiRhs(a, b, q, r, p) - p).normInf();
}

DareSolution solveDare(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r,
                       const DareOptions& options) {
  requireSquare(a, "solveDare(A)");
  requireSquare(q, "solveDare(Q)");
  requireSquare(r, "solveDare(R)");
  const std::size_t n = a.rows();
  if (b.rows() != n || q.rows() != n || r.rows() != b.cols()) {
    throw Error(ErrorCode::InvalidArgument, "solveDare: inconsistent dimensions");
  }

  Matrix p = q;
  std::size_t iter = 0;
  for (;;) {
    Matrix next = riccatiRhs(a, b, q, r, p);
    symmetrize(next);
    ++iter;
    const double step = (next - p).normInf();
    p = std::move(next);
    if (!p.allFinite() || p.normInf() > options.divergenceBound) {
      throw Error(ErrorCode::NotStabilizable, "Riccati recursion diverged");
    }
    if (step <= options.stepTolerance * std::max(1.0, p.normInf())) break;
    if (iter >= options.maxIterations) {
      throw Error(ErrorCode::NotStabilizable, "Riccati recursion did not settle");
    }
  }

  DareSolution sol;
  const Matrix bt = b.transpose();
  sol.gain = solveLinear(r + bt * p * b, bt * p * a);
  sol.residualNorm = dareResidual(a, b, q, r, p);
  sol.closedLoopSpectralRadius = spectralRadius(a - b * sol.gain);
  sol.cost = std::move(p);
  sol.iterations = iter;
  if (sol.closedLoopSpectralRadius >= 1.0) {
    std::ostringstream os;
    os << "closed-loop spectral radius " << sol.closedLoopSpectralRadius;
    throw Error(ErrorCode::NotStabilizable, os.str());
  }
  if (sol.residualNorm > options.residualTolerance) {
    std::ostringstream os;
    os << "residual " << sol.residualNorm << " above tolerance";
    throw Error(ErrorCode::NoConvergence, os.str());
  }
  return sol;
}

Vector finiteDifferenceColumn(const VectorFunction& f, std::span<const double> x0, std::size_t index,
                              double eps) {
  const Vector fx0 = f(x0);
  return finiteDifferenceColumn(f, x0, fx0, index, eps);
}

Vector finiteDifferenceColumn(const VectorFunction& f, std::span<const double> x0,
                              std::span<const double> fx0, std::size_t index, double eps) {
  if (!(eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "finite-difference step must be positive");
  if (index >= x0.size()) throw Error(ErrorCode::InvalidArgument, "finite-difference index out of range");
  Vector x(x0.begin(), x0.end());
  x[index] += eps;
  Vector col = f(x);
  if (col.size() != fx0.size()) throw Error(ErrorCode::InvalidArgument, "finite-difference output size changed");
  for (std::size_t i = 0; i < col.size(); ++i) col[i] = (col[i] - fx0[i]) / eps;
  return col;
}

}  // namespace numerics
}  // namespace devilstick
