#pragma once

#include <stdexcept>
#include <string>

namespace subsetar {

// Base class for all library errors. Statistical-degeneracy conditions
// (singular weight matrices, degenerate designs, ...) derive from this so
// callers can distinguish them from usage errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class InvalidMatrix : public Error {
public:
  explicit InvalidMatrix(const std::string& msg) : Error(msg) {}
};

class SingularWeightMatrix : public Error {
public:
  explicit SingularWeightMatrix(const std::string& msg) : Error(msg) {}
};

class InvalidThreshold : public Error {
public:
  explicit InvalidThreshold(const std::string& msg) : Error(msg) {}
};

class InvalidProbability : public Error {
public:
  explicit InvalidProbability(const std::string& msg) : Error(msg) {}
};

class MomentEvaluationError : public Error {
public:
  MomentEvaluationError(const std::string& msg, long obs) : Error(msg + " (observation " + std::to_string(obs) + ")"), t(obs) {}
  long t;
};

class OrderConditionViolated : public Error {
public:
  explicit OrderConditionViolated(const std::string& msg) : Error(msg) {}
};

class InsufficientSample : public Error {
public:
  explicit InsufficientSample(const std::string& msg) : Error(msg) {}
};

class InvalidHorizon : public Error {
public:
  explicit InvalidHorizon(const std::string& msg) : Error(msg) {}
};

class OptimizationFailed : public Error {
public:
  explicit OptimizationFailed(const std::string& msg) : Error(msg) {}
};

class SingularDesign : public Error {
public:
  explicit SingularDesign(const std::string& msg) : Error(msg) {}
};

class InvalidCovariance : public Error {
public:
  explicit InvalidCovariance(const std::string& msg) : Error(msg) {}
};

class DegenerateDesign : public Error {
public:
  explicit DegenerateDesign(const std::string& msg) : Error(msg) {}
};

class CsvFormatError : public Error {
public:
  explicit CsvFormatError(const std::string& msg) : Error(msg) {}
};

}  // namespace subsetar
