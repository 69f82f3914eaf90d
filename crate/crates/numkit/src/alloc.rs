//! Allocator tuning for tape workloads.

use std::sync::Once;

/// Asks glibc to keep freed blocks of up to 32 MiB inside the heap and to
/// grow it in large steps.
///
/// Tapes allocate and drop many multi-megabyte buffers per step. By default
/// glibc serves those with fresh `mmap`s and returns them on free, so every
/// step pays for zero-filling page faults again. Retaining the memory makes
/// backward passes several times faster. Safe to call any number of times;
/// a no-op on other platforms.
pub fn retain_freed_memory() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        // SAFETY: mallopt only adjusts allocator tunables.
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
            libc::mallopt(libc::M_TOP_PAD, 64 << 20);
        }
    });
}
