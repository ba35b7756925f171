#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace affclip {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied something malformed: bad shapes, empty prompt, non-binary mask.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Inconsistent configuration detected while building a component.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class WeightsLoadError : public Error {
 public:
  WeightsLoadError(const std::string& path, const std::string& what)
      : Error("cannot load weights '" + path + "': " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// A dataset sample violates its invariants.
class DataValidationError : public Error {
 public:
  DataValidationError(const std::string& sample_id, const std::string& what)
      : Error("sample '" + sample_id + "': " + what), sample_id_(sample_id) {}
  const std::string& sample_id() const { return sample_id_; }

 private:
  std::string sample_id_;
};

// Map cannot be normalized (all zeros, negative mass, non-finite).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

// Optimization produced a non-finite loss; carries the offending batch.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& what, std::vector<std::string> batch_ids)
      : Error(what), batch_ids_(std::move(batch_ids)) {}
  const std::vector<std::string>& batch_ids() const { return batch_ids_; }

 private:
  std::vector<std::string> batch_ids_;
};

}  // namespace affclip
