#pragma once

#include <stdexcept>
#include <string>

namespace koopman {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Series too short for the requested operation (e.g. fewer than 2 frames).
class DegenerateSeriesError : public Error {
 public:
  using Error::Error;
};

/// Malformed container, checkpoint, or vector layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NoDataError : public Error {
 public:
  using Error::Error;
};

/// A loss has no valid (pixel, time) pair to average over.
class EmptyBatchError : public Error {
 public:
  using Error::Error;
};

/// Series too short to support the requested prediction horizon.
class HorizonError : public Error {
 public:
  using Error::Error;
};

/// An objective or loss became non-finite during optimization.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class InstabilityError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Input data lacks the rank/variety an analysis needs.
class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

class MisalignmentError : public Error {
 public:
  using Error::Error;
};

/// Irregular subsampling produced an empty kept set.
class EmptyDrawError : public Error {
 public:
  using Error::Error;
};

}  // namespace koopman
