#pragma once

#include <string>
#include <vector>

#include "bmc/channels.hpp"
#include "bmc/counts.hpp"
#include "bmc/features.hpp"
#include "bmc/mdn.hpp"

namespace bmc {

/// CSV with one record per sample: model, arity, p0.., x0.., s0.. . Parameter
/// columns are padded with empty fields up to the widest arity.
void write_dataset(const std::string& path, const std::vector<LabeledSample>& samples);
std::vector<LabeledSample> read_dataset(const std::string& path);

std::string read_text(const std::string& path);
/// Writes atomically through a temporary file in the same directory.
void write_text_file(const std::string& path, const std::string& text);
void ensure_directory(const std::string& path);
/// Throws IoError naming the file when it does not exist.
void require_file(const std::string& path, const std::string& what);

void save_traces(const TraceSet& t, const std::string& path);
TraceSet load_traces(const std::string& path);

void save_pca(const PcaBasis& b, const std::string& path);
PcaBasis load_pca(const std::string& path);

std::string classifier_to_json(const ClassifierModel& m);
ClassifierModel classifier_from_json(const std::string& text);
std::string posterior_to_json(const PosteriorModel& m);
PosteriorModel posterior_from_json(const std::string& text);

void save_classifier(const ClassifierModel& m, const std::string& path);
ClassifierModel load_classifier(const std::string& path);
void save_posterior(const PosteriorModel& m, const std::string& path);
PosteriorModel load_posterior(const std::string& path);

/// Tab-separated table with a header row; numbers printed with 17 digits.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row);
  std::string str() const;
};
std::string fmt(double v);

}  // namespace bmc
