#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adlj/diagnostics.hpp"
#include "adlj/spectrum.hpp"

namespace adlj {

struct NamedSpectrum {
  std::string name;
  SpectrumReport spectrum;
};

struct NamedMap {
  std::string name;
  SimilarityMap map;
};

struct ReportInputs {
  std::vector<NamedSpectrum> spectra;
  std::vector<NamedMap> maps;
  std::optional<ProbeResult> probe;
};

struct ReportOutput {
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;
};

/// Writes spectrum.csv, spectrum_normalized.svg, spectrum_cumulative.svg,
/// similarity_<name>.csv/.svg per map and probe.json. Throws IoError naming the path.
ReportOutput emit_report(const ReportInputs& inputs, const std::filesystem::path& out_dir);

/// Columns: run,index,singular_value,normalized,cumulative.
std::string spectrum_csv(const std::vector<NamedSpectrum>& spectra);
std::vector<NamedSpectrum> parse_spectrum_csv(const std::string& text);
/// Columns: row,col,similarity ("ignored" outside the masked cells).
std::string similarity_csv(const SimilarityMap& map);
SimilarityMap parse_similarity_csv(const std::string& text);

std::string spectrum_svg(const std::vector<NamedSpectrum>& spectra, bool cumulative);
std::string similarity_svg(const SimilarityMap& map);
std::string probe_json(const ProbeResult& probe);

}  // namespace adlj
