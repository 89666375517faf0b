#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "h2o/ndarray.hpp"
#include "h2o/topology.hpp"

namespace h2o {

enum class Split { train, test };
enum class SequenceSource { file, synthetic };

struct SkeletonSequence {
  NdArray frames;  // (raw_len, V, 3)
  int label = 0;   // 0 negative, 1 positive
  std::string subject;
  SequenceSource source = SequenceSource::file;
};

struct DatasetManifest {
  std::vector<SkeletonSequence> sequences;
  std::map<std::string, Split> split;  // subject -> side; empty until split
  std::shared_ptr<const Topology> topology;

  std::vector<std::size_t> indices(Split side) const;
  std::vector<std::string> subjects() const;
};

struct SynthSpec {
  std::size_t num_subjects = 4;
  std::size_t sequences_per_subject = 16;
  double class_balance = 0.5;  // fraction of positive labels
  double noise_std = 0.02;
  double amplitude_min = 0.25;
  double amplitude_max = 0.35;
  double frequency_min = 1.0;
  double frequency_max = 3.0;
  std::size_t raw_len_min = 40;
  std::size_t raw_len_max = 70;
  std::size_t positive_group = 0;  // hyperedge that oscillates for label 1
  std::size_t negative_group = 1;  // hyperedge that oscillates for label 0
  std::uint64_t seed = 0;

  void validate(const Topology& topo) const;
};

// Parses one sequence per line:
// {"subject": "s01", "label": 1, "frames": [[[x,y,z] * V] * raw_len]}
DatasetManifest load_jsonl(const std::string& path, std::shared_ptr<const Topology> topo);
void save_jsonl(const std::string& path, const DatasetManifest& manifest);

// raw == T: identity; raw > T: nearest-index downsampling (index floor(i*raw/T));
// raw < T: pad by repeating the final frame.
NdArray clip_to_length(const NdArray& frames, std::size_t t_len);

// Per frame, subtracts the root joint's coordinates from every joint.
NdArray normalize_root(const NdArray& frames, std::size_t root_joint);

// clip + root-normalize, the tensor the model consumes.
NdArray prepare_input(const SkeletonSequence& seq, const Topology& topo, std::size_t t_len);

// Static pose + noise; the labeled class oscillates one designated hyperedge
// group. Labels are re-derivable from group temporal variance (the energy
// oracle); disagreeing draws are regenerated.
DatasetManifest generate_synthetic(const SynthSpec& spec, std::shared_ptr<const Topology> topo);

// -1 when the dominant-energy group is neither designated group.
int energy_oracle_label(const NdArray& frames, const Topology& topo, std::size_t positive_group,
                        std::size_t negative_group);

void split_by_subject(DatasetManifest& manifest, double train_fraction, std::uint64_t seed);

}  // namespace h2o
