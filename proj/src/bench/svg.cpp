#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "cflow/bench/experiment.hpp"

namespace cflow::bench {

namespace fs = std::filesystem;

namespace {

struct Series {
  std::map<int, double> truth, obs;
  std::map<int, std::map<int, double>> samples;  // sample_id -> time -> value
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::map<int, Series> read_trajectories(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "time,dim,truth,obs,sample_id,value") {
    throw std::runtime_error(path.string() + ": not a trajectory dump");
  }
  std::map<int, Series> by_dim;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != 6) throw std::runtime_error(path.string() + ": malformed row");
    const int t = std::stoi(cells[0]), d = std::stoi(cells[1]), s = std::stoi(cells[4]);
    Series& series = by_dim[d];
    series.truth[t] = std::stod(cells[2]);
    if (!cells[3].empty()) series.obs[t] = std::stod(cells[3]);
    series.samples[s][t] = std::stod(cells[5]);
  }
  return by_dim;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string render(const std::string& title, const Series& s) {
  constexpr double W = 640, H = 360, pad = 40;
  double lo = INFINITY, hi = -INFINITY;
  int tmax = 1;
  auto see = [&](const std::map<int, double>& m) {
    for (auto [t, v] : m) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      tmax = std::max(tmax, t);
    }
  };
  see(s.truth);
  see(s.obs);
  for (const auto& [id, m] : s.samples) see(m);
  if (!(hi > lo)) {
    lo -= 1;
    hi += 1;
  }
  auto x = [&](int t) { return pad + (W - 2 * pad) * t / tmax; };
  auto y = [&](double v) { return H - pad - (H - 2 * pad) * (v - lo) / (hi - lo); };
  auto path = [&](const std::map<int, double>& m) {
    std::string d;
    for (auto [t, v] : m) {
      if (!std::isfinite(v)) continue;
      d += (d.empty() ? "M" : " L") + fmt(x(t)) + "," + fmt(y(std::clamp(v, lo, hi)));
    }
    return d;
  };
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(W) +
                    "\" height=\"" + fmt(H) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt(pad) + "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">" +
         title + "</text>\n";
  svg += "<line x1=\"" + fmt(pad) + "\" y1=\"" + fmt(H - pad) + "\" x2=\"" + fmt(W - pad) +
         "\" y2=\"" + fmt(H - pad) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + fmt(pad) + "\" y1=\"" + fmt(pad) + "\" x2=\"" + fmt(pad) + "\" y2=\"" +
         fmt(H - pad) + "\" stroke=\"black\"/>\n";
  svg += "<text x=\"4\" y=\"" + fmt(pad) + "\" font-size=\"10\">" + fmt(hi) + "</text>\n";
  svg += "<text x=\"4\" y=\"" + fmt(H - pad) + "\" font-size=\"10\">" + fmt(lo) + "</text>\n";
  for (const auto& [id, m] : s.samples) {
    svg += "<path d=\"" + path(m) + "\" fill=\"none\" stroke=\"steelblue\" stroke-opacity=\"0.15\"/>\n";
  }
  svg += "<path d=\"" + path(s.truth) + "\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n";
  for (auto [t, v] : s.obs) {
    if (!std::isfinite(v)) continue;
    svg += "<circle cx=\"" + fmt(x(t)) + "\" cy=\"" + fmt(y(std::clamp(v, lo, hi))) +
           "\" r=\"3\" fill=\"crimson\"/>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace

std::vector<fs::path> export_svg(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) throw std::runtime_error(run_dir.string() + " is not a directory");
  std::vector<fs::path> dumps;
  for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv" &&
        entry.path().parent_path().filename() == "trajectories") {
      dumps.push_back(entry.path());
    }
  }
  std::sort(dumps.begin(), dumps.end());
  std::vector<fs::path> written;
  for (const fs::path& dump : dumps) {
    const fs::path dir = dump.parent_path().parent_path() / "plots";
    fs::create_directories(dir);
    for (const auto& [d, series] : read_trajectories(dump)) {
      const std::string name = dump.stem().string() + "_dim" + std::to_string(d);
      const fs::path out = dir / (name + ".svg");
      std::ofstream f(out);
      f << render(name, series);
      if (!f) throw std::runtime_error("cannot write " + out.string());
      written.push_back(out);
    }
  }
  return written;
}

}  // namespace cflow::bench
