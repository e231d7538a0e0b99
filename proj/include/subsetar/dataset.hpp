#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

namespace subsetar {

// Immutable-after-construction column store. All series share the same
// length and must be finite.
class Dataset {
public:
  long n() const { return n_; }
  bool empty() const { return n_ == 0; }

  void add(const std::string& name, Eigen::VectorXd values);
  bool has(const std::string& name) const;
  const Eigen::VectorXd& col(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }

private:
  long n_ = 0;
  std::vector<std::string> names_;
  std::vector<Eigen::VectorXd> columns_;
};

// CSV ingestion: header row required, decimal point '.', any row with a
// non-numeric cell is rejected with its row number.
Dataset read_csv(const std::string& path);

// 6 significant digits; CSV cells use this everywhere so that reruns are
// byte-comparable.
std::string format_g6(double v);

}  // namespace subsetar
