#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "fedlab/dataset.hpp"
#include "fedlab/errors.hpp"

namespace fedlab {

// CIFAR-10 binary format: each record is 1 label byte (0-9) followed by 3072
// pixel bytes (red plane, green plane, blue plane; each 32x32 row-major),
// 10000 records per file. Pixels are scaled to [0,1]; plane order preserved.

namespace cifar10 {

inline constexpr std::size_t kRecordBytes = 1 + 3072;
inline constexpr std::size_t kRecordsPerFile = 10000;
inline constexpr std::size_t kFileBytes = kRecordBytes * kRecordsPerFile;

inline void load_file_into(const std::string& path, Dataset& ds) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR-10 file '" + path + "'");
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::size_t>(in.tellg());
  if (file_size != kFileBytes) {
    throw FormatError("CIFAR-10 file '" + path + "' has " + std::to_string(file_size) +
                          " bytes, expected " + std::to_string(kFileBytes),
                      file_size);
  }
  in.seekg(0);
  std::vector<unsigned char> record(kRecordBytes);
  for (std::size_t r = 0; r < kRecordsPerFile; ++r) {
    const std::size_t offset = r * kRecordBytes;
    if (!in.read(reinterpret_cast<char*>(record.data()), kRecordBytes))
      throw FormatError("truncated CIFAR-10 record in '" + path + "'", offset);
    if (record[0] > 9)
      throw FormatError("CIFAR-10 label byte " + std::to_string(record[0]) +
                            " out of range in '" + path + "'",
                        offset);
    ds.labels.push_back(record[0]);
    for (std::size_t j = 1; j < kRecordBytes; ++j)
      ds.features.push_back(static_cast<float>(record[j]) / 255.0f);
  }
}

}  // namespace cifar10

struct Cifar10 {
  Dataset train;
  Dataset test;
};

// Loads the standard 5 training files plus test_batch.bin from a directory.
// Throws FormatError before returning any partial dataset.
inline Cifar10 load_cifar10(const std::string& dir) {
  Cifar10 out;
  for (Dataset* ds : {&out.train, &out.test}) {
    ds->feature_shape = {3, 32, 32};
    ds->num_classes = 10;
  }
  out.train.name = "cifar10-train";
  out.test.name = "cifar10-test";
  out.train.features.reserve(50000 * 3072);
  out.train.labels.reserve(50000);
  for (int i = 1; i <= 5; ++i) {
    cifar10::load_file_into(dir + "/data_batch_" + std::to_string(i) + ".bin", out.train);
  }
  cifar10::load_file_into(dir + "/test_batch.bin", out.test);
  return out;
}

}  // namespace fedlab
