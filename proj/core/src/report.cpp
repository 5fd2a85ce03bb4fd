#include "adlj/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "adlj/errors.hpp"

namespace adlj {

namespace {

void write_file(const std::filesystem::path& path, const std::string& text, ReportOutput& out) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
  out.files.push_back(path);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream is(line);
  while (std::getline(is, part, sep)) parts.push_back(part);
  return parts;
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw FormatError("bad number '" + s + "'", 0);
  return v;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string fixed(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

// Blue (-1) through white (0) to red (1).
std::string heat(double v) {
  v = std::clamp(v, -1.0, 1.0);
  int r = 255, g = 255, b = 255;
  if (v >= 0) {
    g = b = static_cast<int>(std::lround(255 * (1 - v)));
  } else {
    r = g = static_cast<int>(std::lround(255 * (1 + v)));
  }
  std::ostringstream os;
  os << '#' << std::hex << std::setfill('0') << std::setw(2) << r << std::setw(2) << g << std::setw(2) << b;
  return os.str();
}

}  // namespace

std::string spectrum_csv(const std::vector<NamedSpectrum>& spectra) {
  std::ostringstream os;
  os << "run,index,singular_value,normalized,cumulative\n" << std::setprecision(17);
  for (const auto& s : spectra) {
    for (std::size_t i = 0; i < s.spectrum.singular_values.size(); ++i) {
      os << s.name << ',' << i + 1 << ',' << s.spectrum.singular_values[i] << ',' << s.spectrum.normalized[i] << ','
         << s.spectrum.cumulative[i] << '\n';
    }
  }
  return os.str();
}

std::vector<NamedSpectrum> parse_spectrum_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  if (line != "run,index,singular_value,normalized,cumulative") throw FormatError("unexpected spectrum header", 0);
  std::vector<NamedSpectrum> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 5) throw FormatError("spectrum row needs 5 fields: " + line, 0);
    if (out.empty() || out.back().name != f[0]) out.push_back({f[0], {}});
    auto& s = out.back().spectrum;
    s.singular_values.push_back(to_double(f[2]));
    s.normalized.push_back(to_double(f[3]));
    s.cumulative.push_back(to_double(f[4]));
    s.dim = s.singular_values.size();
  }
  for (auto& s : out) s.spectrum.effective_rank = effective_rank(s.spectrum.singular_values);
  return out;
}

std::string similarity_csv(const SimilarityMap& map) {
  std::ostringstream os;
  os << "row,col,similarity\n" << std::setprecision(17);
  for (std::size_t r = 0; r < map.h; ++r) {
    for (std::size_t c = 0; c < map.w; ++c) {
      os << r << ',' << c << ',';
      if (map.ignored(r * map.w + c)) os << "ignored";
      else os << map.at(r, c);
      os << '\n';
    }
  }
  return os.str();
}

SimilarityMap parse_similarity_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  if (line != "row,col,similarity") throw FormatError("unexpected similarity header", 0);
  std::vector<std::tuple<std::size_t, std::size_t, double>> cells;
  SimilarityMap map;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 3) throw FormatError("similarity row needs 3 fields: " + line, 0);
    const auto r = static_cast<std::size_t>(std::stoul(f[0]));
    const auto c = static_cast<std::size_t>(std::stoul(f[1]));
    cells.emplace_back(r, c, f[2] == "ignored" ? SimilarityMap::kIgnored : to_double(f[2]));
    map.h = std::max(map.h, r + 1);
    map.w = std::max(map.w, c + 1);
  }
  map.values.assign(map.h * map.w, SimilarityMap::kIgnored);
  for (const auto& [r, c, v] : cells) map.values[r * map.w + c] = v;
  return map;
}

std::string spectrum_svg(const std::vector<NamedSpectrum>& spectra, bool cumulative) {
  const double width = 480, height = 320, left = 56, right = 16, top = 28, bottom = 44;
  const double pw = width - left - right, ph = height - top - bottom;
  std::size_t n = 1;
  for (const auto& s : spectra) n = std::max(n, s.spectrum.singular_values.size());

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\" viewBox=\"0 0 "
     << width << ' ' << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">"
     << (cumulative ? "Cumulative explained variance" : "Sorted normalized singular values") << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = top + ph * (1 - t / 4.0);
    os << "<text x=\"" << left - 6 << "\" y=\"" << fixed(y + 4) << "\" font-family=\"sans-serif\" font-size=\"10\" "
       << "text-anchor=\"end\">" << fixed(t / 4.0) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10
     << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">index (1.." << n << ")</text>\n";
  const auto px = [&](std::size_t i) { return left + (n == 1 ? pw / 2 : pw * static_cast<double>(i) / (n - 1.0)); };
  for (std::size_t k = 0; k < spectra.size(); ++k) {
    const auto& vals = cumulative ? spectra[k].spectrum.cumulative : spectra[k].spectrum.normalized;
    const char* colour = kPalette[k % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < vals.size(); ++i) {
      os << (i ? " " : "") << fixed(px(i)) << ',' << fixed(top + ph * (1 - std::clamp(vals[i], 0.0, 1.0)));
    }
    os << "\"/>\n";
    os << "<text x=\"" << left + 8 << "\" y=\"" << top + 14 + 14 * static_cast<double>(k)
       << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << colour << "\">" << spectra[k].name
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string similarity_svg(const SimilarityMap& map) {
  const double cell = 24;
  const double width = cell * static_cast<double>(map.w), height = cell * static_cast<double>(map.h);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\" viewBox=\"0 0 "
     << width << ' ' << height << "\">\n";
  for (std::size_t r = 0; r < map.h; ++r) {
    for (std::size_t c = 0; c < map.w; ++c) {
      const bool ign = map.ignored(r * map.w + c);
      os << "<rect x=\"" << cell * static_cast<double>(c) << "\" y=\"" << cell * static_cast<double>(r)
         << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"" << (ign ? "#ffffff" : heat(map.at(r, c)))
         << "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

std::string probe_json(const ProbeResult& probe) {
  nlohmann::ordered_json j;
  j["auc"] = probe.auc;
  j["accuracy"] = probe.accuracy;
  j["train_auc"] = probe.train_auc;
  j["train_rows"] = probe.train_rows;
  j["test_rows"] = probe.test_rows;
  j["positive_rate"] = probe.positive_rate;
  return j.dump(2) + "\n";
}

ReportOutput emit_report(const ReportInputs& inputs, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  ReportOutput out;
  if (inputs.spectra.empty()) {
    out.warnings.push_back("no spectra to report; spectrum files not written");
  } else {
    write_file(out_dir / "spectrum.csv", spectrum_csv(inputs.spectra), out);
    write_file(out_dir / "spectrum_normalized.svg", spectrum_svg(inputs.spectra, false), out);
    write_file(out_dir / "spectrum_cumulative.svg", spectrum_svg(inputs.spectra, true), out);
  }
  for (const auto& m : inputs.maps) {
    write_file(out_dir / ("similarity_" + m.name + ".csv"), similarity_csv(m.map), out);
    write_file(out_dir / ("similarity_" + m.name + ".svg"), similarity_svg(m.map), out);
  }
  if (inputs.probe) write_file(out_dir / "probe.json", probe_json(*inputs.probe), out);
  return out;
}

}  // namespace adlj
