#include "cma/grid_field.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace cma {

GridSpec::GridSpec(int complex_dim, int points_per_axis)
    : n_(complex_dim), N_(points_per_axis), size_(1) {
  if (n_ != 1 && n_ != 2) {
    throw Error("GridSpec: complex dimension must be 1 or 2, got " + std::to_string(n_));
  }
  if (N_ < 8 || N_ % 2 != 0) {
    throw Error("GridSpec: points per axis must be even and >= 8, got " + std::to_string(N_));
  }
  for (int a = 0; a < 2 * n_; ++a) size_ *= static_cast<std::size_t>(N_);
}

std::array<int, 4> GridSpec::unflatten(std::size_t flat) const {
  std::array<int, 4> idx{};
  for (int a = real_dims() - 1; a >= 0; --a) {
    idx[a] = static_cast<int>(flat % N_);
    flat /= N_;
  }
  return idx;
}

std::size_t GridSpec::flatten(const std::array<int, 4>& idx) const {
  std::size_t flat = 0;
  for (int a = 0; a < real_dims(); ++a) {
    int i = ((idx[a] % N_) + N_) % N_;
    flat = flat * N_ + static_cast<std::size_t>(i);
  }
  return flat;
}

Coords GridSpec::coords(std::size_t flat) const {
  auto idx = unflatten(flat);
  Coords x{};
  for (int a = 0; a < real_dims(); ++a) x[a] = static_cast<double>(idx[a]) / N_;
  return x;
}

void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what) {
  if (!(a == b)) {
    std::ostringstream os;
    os << what << ": grid mismatch (n=" << a.complex_dim() << ", N=" << a.points_per_axis()
       << " vs n=" << b.complex_dim() << ", N=" << b.points_per_axis() << ")";
    throw GridMismatch(os.str());
  }
}

ScalarField::ScalarField(GridSpec grid, std::vector<double> values)
    : grid_(grid), values_(std::move(values)) {
  if (values_.size() != grid_.size()) {
    throw Error("ScalarField: expected " + std::to_string(grid_.size()) + " samples, got " +
                std::to_string(values_.size()));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw Error("ScalarField: non-finite sample at index " + std::to_string(i));
    }
  }
}

ScalarField::ScalarField(GridSpec grid, double value)
    : grid_(grid), values_(grid.size(), value) {}

ScalarField ScalarField::generate(const GridSpec& grid,
                                  const std::function<double(const Coords&)>& fn) {
  std::vector<double> v(grid.size());
  for (std::size_t p = 0; p < v.size(); ++p) v[p] = fn(grid.coords(p));
  return ScalarField(grid, std::move(v));
}

double ScalarField::max() const { return *std::max_element(values_.begin(), values_.end()); }
double ScalarField::min() const { return *std::min_element(values_.begin(), values_.end()); }
std::size_t ScalarField::argmax() const {
  return static_cast<std::size_t>(std::max_element(values_.begin(), values_.end()) -
                                  values_.begin());
}
double ScalarField::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

ScalarField ScalarField::map(const std::function<double(double)>& fn) const {
  std::vector<double> v(values_.size());
  std::transform(values_.begin(), values_.end(), v.begin(), fn);
  return ScalarField(grid_, std::move(v));
}

namespace {

template <class Op>
ScalarField zip(const ScalarField& a, const ScalarField& b, Op op, const char* what) {
  require_same_grid(a.grid(), b.grid(), what);
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = op(a[i], b[i]);
  return ScalarField(a.grid(), std::move(v));
}

}  // namespace

ScalarField operator+(const ScalarField& a, const ScalarField& b) {
  return zip(a, b, std::plus<>{}, "operator+");
}
ScalarField operator-(const ScalarField& a, const ScalarField& b) {
  return zip(a, b, std::minus<>{}, "operator-");
}
ScalarField operator*(const ScalarField& a, const ScalarField& b) {
  return zip(a, b, std::multiplies<>{}, "operator*");
}
ScalarField operator*(double s, const ScalarField& a) {
  return a.map([s](double v) { return s * v; });
}
ScalarField operator+(const ScalarField& a, double c) {
  return a.map([c](double v) { return v + c; });
}

ComplexMatrixField::ComplexMatrixField(GridSpec grid, int dim)
    : grid_(grid), dim_(dim), data_(grid.size() * dim * dim) {}

double ComplexMatrixField::hermitian_defect() const {
  double worst = 0.0;
  for (std::size_t p = 0; p < grid_.size(); ++p) {
    for (int i = 0; i < dim_; ++i) {
      for (int j = i; j < dim_; ++j) {
        worst = std::max(worst, std::abs(at(p, i, j) - std::conj(at(p, j, i))));
      }
    }
  }
  return worst;
}

namespace {

// Neumaier-compensated sum; grid sums reach 10^6 terms at n = 2.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace

double integrate(const ScalarField& u, const ScalarField& weight) {
  require_same_grid(u.grid(), weight.grid(), "integrate");
  CompensatedSum s;
  for (std::size_t i = 0; i < u.size(); ++i) s.add(u[i] * weight[i]);
  return s.value() / static_cast<double>(u.size());
}

double integrate(const ScalarField& u) {
  CompensatedSum s;
  for (double v : u.values()) s.add(v);
  return s.value() / static_cast<double>(u.size());
}

double lp_norm(const ScalarField& u, double p, const ScalarField& weight) {
  if (p < 1.0) throw Error("lp_norm: p must be >= 1");
  require_same_grid(u.grid(), weight.grid(), "lp_norm");
  CompensatedSum s;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (weight[i] < 0.0) {
      throw Error("lp_norm: negative weight at index " + std::to_string(i));
    }
    s.add(std::pow(std::abs(u[i]), p) * weight[i]);
  }
  return std::pow(s.value() / static_cast<double>(u.size()), 1.0 / p);
}

double sup_distance(const ScalarField& a, const ScalarField& b) {
  require_same_grid(a.grid(), b.grid(), "sup_distance");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void write_snapshot(const ScalarField& u, const std::string& base, const std::string& name) {
  std::ofstream bin(base + ".bin", std::ios::binary);
  if (!bin) throw Error("write_snapshot: cannot open " + base + ".bin");
  for (double v : u.values()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
    bin.write(reinterpret_cast<const char*>(bytes), 8);
  }
  std::ofstream meta(base + ".meta");
  if (!meta) throw Error("write_snapshot: cannot open " + base + ".meta");
  meta << "n = " << u.grid().complex_dim() << "\n"
       << "N = " << u.grid().points_per_axis() << "\n"
       << "name = " << name << "\n";
}

Snapshot read_snapshot(const std::string& base) {
  std::ifstream meta(base + ".meta");
  if (!meta) throw Error("read_snapshot: cannot open " + base + ".meta");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(meta, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  if (!kv.count("n") || !kv.count("N")) throw Error("read_snapshot: metadata lacks n or N");
  GridSpec grid(std::stoi(kv["n"]), std::stoi(kv["N"]));

  std::ifstream bin(base + ".bin", std::ios::binary);
  if (!bin) throw Error("read_snapshot: cannot open " + base + ".bin");
  std::vector<double> v(grid.size());
  for (auto& x : v) {
    unsigned char bytes[8];
    if (!bin.read(reinterpret_cast<char*>(bytes), 8)) {
      throw Error("read_snapshot: " + base + ".bin is truncated");
    }
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    x = std::bit_cast<double>(bits);
  }
  if (bin.peek() != std::char_traits<char>::eof()) {
    throw Error("read_snapshot: " + base + ".bin has trailing data");
  }
  return {ScalarField(grid, std::move(v)), kv.count("name") ? kv["name"] : std::string{}};
}

}  // namespace cma
