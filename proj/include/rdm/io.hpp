#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rdm {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline void append(Bytes& out, ByteView bytes) { out.insert(out.end(), bytes.begin(), bytes.end()); }

/// Read-only memory mapping of a whole file.
class MappedFile {
 public:
  explicit MappedFile(const std::filesystem::path& path);
  ~MappedFile();

  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;

  [[nodiscard]] ByteView bytes() const noexcept { return {data_, size_}; }
  [[nodiscard]] std::size_t size() const noexcept { return size_; }
  [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

  /// Bytes of the mapping currently resident in physical memory, or the
  /// mapped size when the platform cannot tell.
  [[nodiscard]] std::size_t resident_bytes() const;

 private:
  std::filesystem::path path_;
  const std::uint8_t* data_ = nullptr;
  std::size_t size_ = 0;
};

/// Immutable random-access byte source, backed by a mapped file or an owned
/// buffer. Copies share the underlying storage; safe for concurrent reads.
class ByteSource {
 public:
  static ByteSource from_file(const std::filesystem::path& path);
  static ByteSource from_bytes(Bytes bytes);

  [[nodiscard]] ByteView bytes() const noexcept { return view_; }
  [[nodiscard]] std::size_t size() const noexcept { return view_.size(); }
  [[nodiscard]] const std::string& name() const noexcept { return name_; }

 private:
  std::shared_ptr<const void> owner_;
  ByteView view_;
  std::string name_;
};

/// Append-mostly byte sink that supports patching already-written ranges.
class ByteSink {
 public:
  virtual ~ByteSink() = default;
  virtual void write(ByteView bytes) = 0;
  virtual void patch(std::uint64_t offset, ByteView bytes) = 0;
  [[nodiscard]] virtual std::uint64_t tell() const = 0;
  virtual void close() = 0;
};

class FileSink final : public ByteSink {
 public:
  explicit FileSink(const std::filesystem::path& path);
  ~FileSink() override;

  void write(ByteView bytes) override;
  void patch(std::uint64_t offset, ByteView bytes) override;
  [[nodiscard]] std::uint64_t tell() const override { return position_; }
  void close() override;

 private:
  std::filesystem::path path_;
  std::FILE* file_ = nullptr;
  std::uint64_t position_ = 0;
};

class MemorySink final : public ByteSink {
 public:
  void write(ByteView bytes) override { append(*buffer_, bytes); }
  void patch(std::uint64_t offset, ByteView bytes) override;
  [[nodiscard]] std::uint64_t tell() const override { return buffer_->size(); }
  void close() override {}

  /// Shared so the bytes stay reachable after the sink moves into a writer.
  [[nodiscard]] std::shared_ptr<Bytes> buffer() const { return buffer_; }

 private:
  std::shared_ptr<Bytes> buffer_ = std::make_shared<Bytes>();
};

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, ByteView bytes);

/// Sum of regular file sizes under a file or directory path.
std::uint64_t total_size(const std::filesystem::path& path);

}  // namespace rdm
