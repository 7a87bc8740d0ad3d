// Small dense linear algebra used throughout the library: matrices up to
// roughly 8x8, Gaussian elimination, a Hessenberg/QR eigenvalue routine,
// Jacobi singular values, a fixed-point DARE solver and forward differences.
#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace devilstick::numerics {

using Vector = std::vector<double>;

/// Row-major dense matrix. Dimensions are fixed at construction.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);
  static Matrix columnVector(std::span<const double> v);
  static Matrix rowVector(std::span<const double> v);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool isSquare() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<const double> data() const noexcept { return data_; }
  Vector column(std::size_t c) const;
  Vector row(std::size_t r) const;
  void setColumn(std::size_t c, std::span<const double> v);

  Matrix transpose() const;
  /// Maximum absolute row sum.
  double normInf() const;
  double maxAbs() const;
  bool allFinite() const;

  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double s);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);
Matrix operator*(const Matrix& a, const Matrix& b);
Vector operator*(const Matrix& a, std::span<const double> x);

double normInf(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

/// Pivot magnitude below which elimination reports SingularMatrix.
inline constexpr double kPivotFloor = 1e-12;

/// Solves Ax = b by Gaussian elimination with partial pivoting.
/// Throws Error{SingularMatrix} when a pivot falls below kPivotFloor.
Vector solveLinear(const Matrix& a, std::span<const double> b);
/// Multi right-hand-side variant: solves AX = B column by column.
Matrix solveLinear(const Matrix& a, const Matrix& b);

double determinant(const Matrix& a);

/// Eigenvalues of a general real square matrix (balancing, Hessenberg
/// reduction, Francis double-shift QR). Complex pairs come out conjugated.
/// `maxSweeps == 0` selects the default cap of 100*n^2 QR sweeps.
std::vector<std::complex<double>> eigenvaluesDense(const Matrix& a, std::size_t maxSweeps = 0);

double spectralRadius(const Matrix& a);

/// Singular values in descending order (one-sided Jacobi).
Vector singularValues(const Matrix& a);

struct DareOptions {
  double stepTolerance = 1e-12;
  double residualTolerance = 1e-9;
  std::size_t maxIterations = 200000;
  /// Iteration is declared divergent once ||P||inf exceeds this.
  double divergenceBound = 1e14;
};

struct DareSolution {
  Matrix cost;  // P
  Matrix gain;  // K, with the closed loop A - B K
  std::size_t iterations = 0;
  double residualNorm = 0.0;
  double closedLoopSpectralRadius = 0.0;
};

/// Discrete-time algebraic Riccati equation
///   P = A'PA - A'PB (R + B'PB)^-1 B'PA + Q
/// solved by fixed-point iteration of the Riccati recursion from P0 = Q.
DareSolution solveDare(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r,
                       const DareOptions& options = {});

/// Residual ||rhs(P) - P||inf of the Riccati equation for a candidate P.
double dareResidual(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r,
                    const Matrix& p);

using VectorFunction = std::function<Vector(std::span<const double>)>;

/// [f(x0 + eps e_i) - f(x0)] / eps
Vector finiteDifferenceColumn(const VectorFunction& f, std::span<const double> x0,
                              std::size_t index, double eps);
/// Same, with the base value f(x0) supplied by the caller.
Vector finiteDifferenceColumn(const VectorFunction& f, std::span<const double> x0,
                              std::span<const double> fx0, std::size_t index, double eps);

}  // namespace devilstick::numerics
