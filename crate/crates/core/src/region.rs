//! Raw memory regions shared between a client and the compositor.
//!
//! A region is either a page-aligned heap allocation (single-process use and
//! tests) or a `MAP_SHARED` mapping of a file, typically under `/dev/shm`, so
//! separate processes can see the same bytes at different base addresses.

use std::alloc::{self, Layout};
use std::fs::{File, OpenOptions};
use std::io;
use std::os::fd::AsRawFd;
use std::path::Path;
use std::ptr::{self, NonNull};
use std::sync::atomic::{AtomicU32, AtomicU64};

const REGION_ALIGN: usize = 4096;

enum Backing {
    Heap(Layout),
    Mapped { _file: File },
}

pub struct Region {
    base: NonNull<u8>,
    len: usize,
    backing: Backing,
}

// SAFETY: the region is plain memory. Concurrent access is coordinated by the
// frame-queue status words; every accessor bounds-checks its range.
unsafe impl Send for Region {}
unsafe impl Sync for Region {}

impl Region {
    /// Zeroed, page-aligned heap region.
    pub fn heap(len: usize) -> Region {
        assert!(len > 0, "region length must be positive");
        let layout = Layout::from_size_align(len, REGION_ALIGN).expect("region layout");
        // SAFETY: layout has non-zero size.
        let ptr = unsafe { alloc::alloc_zeroed(layout) };
        let base = NonNull::new(ptr).unwrap_or_else(|| alloc::handle_alloc_error(layout));
        Region {
            base,
            len,
            backing: Backing::Heap(layout),
        }
    }

    /// Creates (or truncates) `path`, sizes it to `len` zero bytes and maps it.
    pub fn create_file(path: &Path, len: usize) -> io::Result<Region> {
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)?;
        file.set_len(len as u64)?;
        Self::map(file, len)
    }

    /// Maps an existing region file read-write.
    pub fn open_file(path: &Path) -> io::Result<Region> {
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        let len = usize::try_from(file.metadata()?.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "region too large"))?;
        Self::map(file, len)
    }

    fn map(file: File, len: usize) -> io::Result<Region> {
        if len == 0 {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "empty region file"));
        }
        // SAFETY: mapping a file we hold open; the result is checked below.
        let ptr = unsafe {
            libc::mmap(
                ptr::null_mut(),
                len,
                libc::PROT_READ | libc::PROT_WRITE,
                libc::MAP_SHARED,
                file.as_raw_fd(),
                0,
            )
        };
        if ptr == libc::MAP_FAILED {
            return Err(io::Error::last_os_error());
        }
        Ok(Region {
            base: NonNull::new(ptr.cast()).expect("mmap returned null"),
            len,
            backing: Backing::Mapped { _file: file },
        })
    }

    /// Revokes write access to `[offset, offset + len)` for this mapping.
    ///
    /// Protection works on whole pages, so the start is rounded up to the next
    /// page boundary. Heap regions are not affected.
    pub fn protect_read_only(&self, offset: usize, len: usize) -> io::Result<()> {
        if !matches!(self.backing, Backing::Mapped { .. }) {
            return Ok(());
        }
        let page = page_size();
        let start = offset.div_ceil(page) * page;
        let end = offset.saturating_add(len).min(self.len);
        if start >= end {
            return Ok(());
        }
        let span = (end - start).div_ceil(page) * page;
        // SAFETY: the range lies inside our own mapping.
        let rc = unsafe {
            libc::mprotect(self.base.as_ptr().add(start).cast(), span, libc::PROT_READ)
        };
        if rc != 0 {
            return Err(io::Error::last_os_error());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_mapped(&self) -> bool {
        matches!(self.backing, Backing::Mapped { .. })
    }

    fn check(&self, offset: usize, len: usize) {
        assert!(
            offset.checked_add(len).is_some_and(|end| end <= self.len),
            "region access {offset}+{len} outside {} bytes",
            self.len
        );
    }

    pub fn contains(&self, offset: usize, len: usize) -> bool {
        offset.checked_add(len).is_some_and(|end| end <= self.len)
    }

    pub fn atomic_u32(&self, offset: usize) -> &AtomicU32 {
        self.check(offset, 4);
        assert_eq!(offset % 4, 0, "misaligned u32 at {offset}");
        // SAFETY: in bounds, aligned (base is page aligned), lives as long as self.
        unsafe { AtomicU32::from_ptr(self.base.as_ptr().add(offset).cast()) }
    }

    pub fn atomic_u64(&self, offset: usize) -> &AtomicU64 {
        self.check(offset, 8);
        assert_eq!(offset % 8, 0, "misaligned u64 at {offset}");
        // SAFETY: as above.
        unsafe { AtomicU64::from_ptr(self.base.as_ptr().add(offset).cast()) }
    }

    /// Copies bytes out of the region; `false` if the range is out of bounds.
    pub fn read_into(&self, offset: usize, out: &mut [u8]) -> bool {
        if !self.contains(offset, out.len()) {
            return false;
        }
        // SAFETY: bounds checked above.
        unsafe {
            ptr::copy_nonoverlapping(self.base.as_ptr().add(offset), out.as_mut_ptr(), out.len());
        }
        true
    }

    /// Copy of the whole region, e.g. for dumping to disk.
    pub fn to_vec(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len];
        self.read_into(0, &mut out);
        out
    }

    /// Writes raw bytes into the region.
    ///
    /// # Safety
    /// No other party may be accessing `[offset, offset + data.len())` through a
    /// reference obtained from [`Region::bytes`] or [`Region::bytes_mut`].
    pub unsafe fn write_bytes(&self, offset: usize, data: &[u8]) {
        self.check(offset, data.len());
        ptr::copy_nonoverlapping(data.as_ptr(), self.base.as_ptr().add(offset), data.len());
    }

    /// # Safety
    /// The caller must hold read ownership of the range under the frame-queue
    /// protocol (no concurrent writer in this address space).
    pub unsafe fn bytes(&self, offset: usize, len: usize) -> &[u8] {
        self.check(offset, len);
        std::slice::from_raw_parts(self.base.as_ptr().add(offset), len)
    }

    /// # Safety
    /// The caller must hold exclusive write ownership of the range under the
    /// frame-queue protocol.
    #[allow(clippy::mut_from_ref)]
    pub unsafe fn bytes_mut(&self, offset: usize, len: usize) -> &mut [u8] {
        self.check(offset, len);
        std::slice::from_raw_parts_mut(self.base.as_ptr().add(offset), len)
    }
}

impl Drop for Region {
    fn drop(&mut self) {
        match &self.backing {
            // SAFETY: allocated in `heap` with this layout.
            Backing::Heap(layout) => unsafe { alloc::dealloc(self.base.as_ptr(), *layout) },
            // SAFETY: mapped in `map` with this length.
            Backing::Mapped { .. } => unsafe {
                libc::munmap(self.base.as_ptr().cast(), self.len);
            },
        }
    }
}

impl std::fmt::Debug for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Region")
            .field("len", &self.len)
            .field("mapped", &self.is_mapped())
            .finish()
    }
}

pub fn page_size() -> usize {
    // SAFETY: sysconf has no preconditions.
    let size = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if size > 0 {
        size as usize
    } else {
        4096
    }
}
