#include "h2o/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace h2o {

std::vector<std::size_t> DatasetManifest::indices(Split side) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    auto it = split.find(sequences[i].subject);
    if (it != split.end() && it->second == side) out.push_back(i);
  }
  return out;
}

std::vector<std::string> DatasetManifest::subjects() const {
  std::set<std::string> s;
  for (const auto& seq : sequences) s.insert(seq.subject);
  return {s.begin(), s.end()};
}

void SynthSpec::validate(const Topology& topo) const {
  if (num_subjects < 1 || sequences_per_subject < 1)
    throw ValidationError("synth spec: needs at least one subject and one sequence");
  if (class_balance < 0.0 || class_balance > 1.0)
    throw ValidationError("synth spec: class_balance must be in [0,1]");
  if (amplitude_min > amplitude_max || frequency_min > frequency_max ||
      raw_len_min > raw_len_max)
    throw ValidationError("synth spec: inverted range");
  if (raw_len_min < 2) throw ValidationError("synth spec: raw_len_min must be >= 2");
  if (amplitude_min <= 3.0 * noise_std)
    throw ValidationError("synth spec: inseparable, amplitude " + std::to_string(amplitude_min) +
                          " must exceed 3x noise_std " + std::to_string(noise_std));
  const std::size_t e = topo.num_hyperedges();
  if (positive_group >= e || negative_group >= e)
    throw ValidationError("synth spec: oscillating group out of range for " + std::to_string(e) +
                          " hyperedges");
  if (positive_group == negative_group)
    throw ValidationError("synth spec: positive and negative groups must differ");
  if (topo.partition.assignment[topo.root_joint] == positive_group ||
      topo.partition.assignment[topo.root_joint] == negative_group)
    throw ValidationError("synth spec: root joint's hyperedge cannot be a designated group");
}

DatasetManifest load_jsonl(const std::string& path, std::shared_ptr<const Topology> topo) {
  std::ifstream in(path);
  if (!in) throw ValidationError("load_jsonl: cannot open '" + path + "'");
  DatasetManifest manifest;
  manifest.topology = topo;
  const std::size_t v_len = topo->num_vertices();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw ValidationError("load_jsonl: line " + std::to_string(line_no) + " is not valid JSON");
    if (!j.contains("subject") || !j.contains("label") || !j.contains("frames"))
      throw ValidationError("load_jsonl: line " + std::to_string(line_no) +
                            " missing subject/label/frames");
    SkeletonSequence seq;
    seq.subject = j["subject"].get<std::string>();
    seq.label = j["label"].get<int>();
    if (seq.label != 0 && seq.label != 1)
      throw ValidationError("load_jsonl: line " + std::to_string(line_no) + " has label " +
                            std::to_string(seq.label) + ", expected 0 or 1");
    const auto& frames = j["frames"];
    if (!frames.is_array() || frames.empty())
      throw ValidationError("load_jsonl: line " + std::to_string(line_no) +
                            " needs at least one frame");
    const std::size_t raw = frames.size();
    seq.frames = NdArray({raw, v_len, 3});
    for (std::size_t t = 0; t < raw; ++t) {
      const auto& frame = frames[t];
      if (!frame.is_array() || frame.size() != v_len)
        throw ValidationError("load_jsonl: line " + std::to_string(line_no) + " frame " +
                              std::to_string(t) + " has " + std::to_string(frame.size()) +
                              " joints, expected " + std::to_string(v_len));
      for (std::size_t v = 0; v < v_len; ++v) {
        const auto& joint = frame[v];
        // 11-value keypoints (3D coords + rotations + 2D projections) are
        // reduced to the leading 3D spatial coordinates.
        if (!joint.is_array() || (joint.size() != 3 && joint.size() != 11))
          throw ValidationError("load_jsonl: line " + std::to_string(line_no) + " frame " +
                                std::to_string(t) + " joint " + std::to_string(v) +
                                " must be [x,y,z] or an 11-value keypoint");
        for (std::size_t c = 0; c < 3; ++c) {
          const double value = joint[c].get<double>();
          if (!std::isfinite(value))
            throw ValidationError("load_jsonl: line " + std::to_string(line_no) +
                                  " has a non-finite coordinate");
          seq.frames.at(t, v, c) = value;
        }
      }
    }
    manifest.sequences.push_back(std::move(seq));
  }
  return manifest;
}

void save_jsonl(const std::string& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw ValidationError("save_jsonl: cannot write '" + path + "'");
  for (const auto& seq : manifest.sequences) {
    nlohmann::json frames = nlohmann::json::array();
    for (std::size_t t = 0; t < seq.frames.dim(0); ++t) {
      nlohmann::json frame = nlohmann::json::array();
      for (std::size_t v = 0; v < seq.frames.dim(1); ++v)
        frame.push_back({seq.frames.at(t, v, 0), seq.frames.at(t, v, 1), seq.frames.at(t, v, 2)});
      frames.push_back(std::move(frame));
    }
    nlohmann::json j{{"subject", seq.subject}, {"label", seq.label}, {"frames", std::move(frames)}};
    out << j.dump() << "\n";
  }
}

NdArray clip_to_length(const NdArray& frames, std::size_t t_len) {
  if (frames.ndim() != 3) throw ValidationError("clip_to_length: frames must be (raw,V,3)");
  const std::size_t raw = frames.dim(0), v_len = frames.dim(1), c_len = frames.dim(2);
  if (raw == t_len) return frames;
  NdArray out({t_len, v_len, c_len}, frames.dtype());
  const std::size_t plane = v_len * c_len;
  for (std::size_t t = 0; t < t_len; ++t) {
    const std::size_t src = raw > t_len ? (t * raw) / t_len : std::min(t, raw - 1);
    std::copy_n(frames.data() + src * plane, plane, out.data() + t * plane);
  }
  return out;
}

NdArray normalize_root(const NdArray& frames, std::size_t root_joint) {
  if (frames.ndim() != 3) throw ValidationError("normalize_root: frames must be (T,V,3)");
  if (root_joint >= frames.dim(1))
    throw ValidationError("normalize_root: root joint " + std::to_string(root_joint) +
                          " out of range");
  NdArray out = frames;
  for (std::size_t t = 0; t < out.dim(0); ++t) {
    const double rx = frames.at(t, root_joint, 0);
    const double ry = frames.at(t, root_joint, 1);
    const double rz = frames.at(t, root_joint, 2);
    for (std::size_t v = 0; v < out.dim(1); ++v) {
      out.at(t, v, 0) -= rx;
      out.at(t, v, 1) -= ry;
      out.at(t, v, 2) -= rz;
    }
  }
  return out;
}

NdArray prepare_input(const SkeletonSequence& seq, const Topology& topo, std::size_t t_len) {
  return normalize_root(clip_to_length(seq.frames, t_len), topo.root_joint);
}

int energy_oracle_label(const NdArray& frames, const Topology& topo, std::size_t positive_group,
                        std::size_t negative_group) {
  const std::size_t t_len = frames.dim(0), v_len = frames.dim(1), c_len = frames.dim(2);
  const std::size_t e_len = topo.num_hyperedges();
  std::vector<double> energy(e_len, 0.0);
  std::vector<std::size_t> coords(e_len, 0);
  for (std::size_t v = 0; v < v_len; ++v) {
    const std::size_t e = topo.partition.assignment[v];
    for (std::size_t c = 0; c < c_len; ++c) {
      double mean = 0.0;
      for (std::size_t t = 0; t < t_len; ++t) mean += frames.at(t, v, c);
      mean /= static_cast<double>(t_len);
      double var = 0.0;
      for (std::size_t t = 0; t < t_len; ++t) {
        const double d = frames.at(t, v, c) - mean;
        var += d * d;
      }
      energy[e] += var / static_cast<double>(t_len);
      ++coords[e];
    }
  }
  std::size_t best = 0;
  double best_energy = -1.0;
  for (std::size_t e = 0; e < e_len; ++e) {
    const double mean_var = coords[e] ? energy[e] / static_cast<double>(coords[e]) : 0.0;
    if (mean_var > best_energy) {
      best_energy = mean_var;
      best = e;
    }
  }
  if (best == positive_group) return 1;
  if (best == negative_group) return 0;
  return -1;
}

DatasetManifest generate_synthetic(const SynthSpec& spec, std::shared_ptr<const Topology> topo) {
  spec.validate(*topo);
  DatasetManifest manifest;
  manifest.topology = topo;
  const std::size_t v_len = topo->num_vertices();
  Rng rng(Rng::derive(spec.seed, "synthetic"));

  const std::size_t total = spec.num_subjects * spec.sequences_per_subject;
  const std::size_t positives =
      static_cast<std::size_t>(std::llround(spec.class_balance * static_cast<double>(total)));

  std::size_t emitted = 0;
  for (std::size_t s = 0; s < spec.num_subjects; ++s) {
    for (std::size_t q = 0; q < spec.sequences_per_subject; ++q, ++emitted) {
      const int label = emitted < positives ? 1 : 0;
      const std::size_t group = label == 1 ? spec.positive_group : spec.negative_group;

      SkeletonSequence seq;
      seq.label = label;
      seq.subject = "s" + std::to_string(s);
      seq.source = SequenceSource::synthetic;
      for (int attempt = 0; attempt < 100; ++attempt) {
        const std::size_t raw =
            spec.raw_len_min + rng.index(spec.raw_len_max - spec.raw_len_min + 1);
        NdArray base({v_len, 3});
        for (std::size_t i = 0; i < base.numel(); ++i) base[i] = rng.normal(0.0, 0.5);
        const double amp = rng.uniform(spec.amplitude_min, spec.amplitude_max);
        const double freq = rng.uniform(spec.frequency_min, spec.frequency_max);
        const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);

        seq.frames = NdArray({raw, v_len, 3});
        for (std::size_t t = 0; t < raw; ++t) {
          const double osc =
              amp * std::sin(2.0 * 3.14159265358979323846 * freq * static_cast<double>(t) /
                                 static_cast<double>(raw) +
                             phase);
          for (std::size_t v = 0; v < v_len; ++v) {
            const bool oscillates = topo->partition.assignment[v] == group;
            for (std::size_t c = 0; c < 3; ++c)
              seq.frames.at(t, v, c) =
                  base.at(v, c) + rng.normal(0.0, spec.noise_std) + (oscillates ? osc : 0.0);
          }
        }
        if (energy_oracle_label(seq.frames, *topo, spec.positive_group, spec.negative_group) ==
            label)
          break;
        if (attempt == 99)
          throw ValidationError("generate_synthetic: could not produce an oracle-consistent "
                                "sequence; spec is too noisy");
      }
      manifest.sequences.push_back(std::move(seq));
    }
  }
  return manifest;
}

void split_by_subject(DatasetManifest& manifest, double train_fraction, std::uint64_t seed) {
  std::vector<std::string> subjects = manifest.subjects();
  if (subjects.size() < 2)
    throw ValidationError("split_by_subject: need at least 2 subjects, got " +
                          std::to_string(subjects.size()));
  if (train_fraction <= 0.0 || train_fraction >= 1.0)
    throw ValidationError("split_by_subject: train_fraction must be in (0,1)");
  Rng rng(Rng::derive(seed, "split_by_subject"));
  std::shuffle(subjects.begin(), subjects.end(), rng.engine());
  std::size_t train_count = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(subjects.size())));
  train_count = std::min(std::max<std::size_t>(train_count, 1), subjects.size() - 1);
  manifest.split.clear();
  for (std::size_t i = 0; i < subjects.size(); ++i)
    manifest.split[subjects[i]] = i < train_count ? Split::train : Split::test;
}

}  // namespace h2o
