#pragma once

#include <stdexcept>
#include <string>

namespace cqiv {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Design matrix is (numerically) collinear on the positively weighted rows.
class RankDeficient : public Error {
 public:
  using Error::Error;
};

class NonFinite : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

/// A binary-response model cannot be fit: one class is absent among the
/// positively weighted rows.
class Separation : public Error {
 public:
  using Error::Error;
};

/// A selection rule produced no observations.
class EmptySelection : public Error {
 public:
  using Error::Error;
};

class NotFitted : public Error {
 public:
  using Error::Error;
};

class SpecMismatch : public Error {
 public:
  using Error::Error;
};

class TooFewDraws : public Error {
 public:
  using Error::Error;
};

class NonConvergence : public Error {
 public:
  using Error::Error;
};

}  // namespace cqiv
