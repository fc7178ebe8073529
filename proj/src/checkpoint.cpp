#include "rapid/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "rapid/errors.hpp"

namespace rapid {

namespace {

constexpr char kMagic[8] = {'R', 'A', 'P', 'I', 'D', 'C', 'K', '1'};

template <typename U>
void put_le(std::vector<unsigned char>& buf, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
  }
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::vector<unsigned char> buf(kMagic, kMagic + 8);
  put_le<std::uint32_t>(buf, kCheckpointVersion);
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.theta.size()));
  put_le<std::uint32_t>(buf, ckpt.vocab_size);
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.task_name.size()));
  put_le<std::uint64_t>(buf, ckpt.step);
  buf.insert(buf.end(), ckpt.task_name.begin(), ckpt.task_name.end());
  for (Eigen::Index i = 0; i < ckpt.theta.size(); ++i) {
    put_le<std::uint64_t>(buf, std::bit_cast<std::uint64_t>(ckpt.theta[i]));
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open checkpoint for writing: " + path.string());
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw Error("failed writing checkpoint: " + path.string());

  std::ofstream side(path.string() + ".txt", std::ios::trunc);
  side << "format = RAPIDCK1\n"
       << "version = " << kCheckpointVersion << '\n'
       << "feature_dimension = " << ckpt.theta.size() << '\n'
       << "vocab_size = " << ckpt.vocab_size << '\n'
       << "task = " << ckpt.task_name << '\n'
       << "step = " << ckpt.step << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint: " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 32 || std::memcmp(buf.data(), kMagic, 8) != 0) {
    throw DomainError("not a RAPIDCK1 checkpoint: " + path.string());
  }
  const auto version = get_le<std::uint32_t>(buf.data() + 8);
  if (version != kCheckpointVersion) {
    throw DomainError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto dim = get_le<std::uint32_t>(buf.data() + 12);
  Checkpoint ckpt;
  ckpt.vocab_size = get_le<std::uint32_t>(buf.data() + 16);
  const auto name_len = get_le<std::uint32_t>(buf.data() + 20);
  ckpt.step = get_le<std::uint64_t>(buf.data() + 24);
  const std::size_t expected = 32 + static_cast<std::size_t>(name_len) + 8 * std::size_t{dim};
  if (buf.size() != expected) {
    throw DomainError("checkpoint size " + std::to_string(buf.size()) + " does not match header (" +
                      std::to_string(expected) + ")");
  }
  ckpt.task_name.assign(reinterpret_cast<const char*>(buf.data() + 32), name_len);
  ckpt.theta.resize(dim);
  const unsigned char* p = buf.data() + 32 + name_len;
  for (std::uint32_t i = 0; i < dim; ++i) {
    ckpt.theta[i] = std::bit_cast<double>(get_le<std::uint64_t>(p + 8 * std::size_t{i}));
  }
  return ckpt;
}

}  // namespace rapid
