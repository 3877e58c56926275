use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::ops::Deref;
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use super::tile::{Layout, LocalCell, Tile};
use crate::model::{ArrayMeta, AttrType, CellSchema, Scalar};
use crate::pool::{BufferObject, BufferPool, EngineTag, EvictionHandler, ObjectId};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"M2AR";
pub const VERSION: u32 = 1;
const ABSENT_TAG: u8 = 0xFF;

/// Where a tile's encoded block lives.
#[derive(Clone)]
enum Block {
    Memory(Arc<[u8]>),
    File { offset: u64, len: u64 },
}

/// Per-tile cache slot. Registered with the buffer pool while its decoded
/// tile is resident.
struct TileSlot {
    id: ObjectId,
    pins: AtomicU32,
    pin_total: AtomicU64,
    reads: AtomicU64,
    load: Mutex<()>,
    data: Mutex<Option<Arc<Tile>>>,
}

impl EvictionHandler for TileSlot {
    fn is_evictable(&self, _: ObjectId) -> bool {
        self.pins.load(Ordering::Acquire) == 0
    }

    fn do_eviction(&self, _: ObjectId) {
        // Blocks are written through on every tile write, so there is nothing
        // to flush here.
        *self.data.lock().unwrap_or_else(|p| p.into_inner()) = None;
    }
}

/// A tiled array. Encoded tile blocks are the persistent copy (in memory or
/// in an array file); decoded tiles are cached in the shared buffer pool and
/// accessed through [`StoredArray::pin`].
pub struct StoredArray {
    meta: ArrayMeta,
    layout: Layout,
    seed: Option<u64>,
    pool: Arc<BufferPool>,
    blocks: RwLock<Vec<Option<Block>>>,
    file: Option<Mutex<File>>,
    slots: Vec<Arc<TileSlot>>,
}

impl std::fmt::Debug for StoredArray {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoredArray")
            .field("meta", &self.meta)
            .field("layout", &self.layout)
            .finish_non_exhaustive()
    }
}

/// A pinned tile; unpinned on drop.
pub struct PinnedTile<'a> {
    slot: &'a TileSlot,
    tile: Arc<Tile>,
}

impl Deref for PinnedTile<'_> {
    type Target = Tile;

    fn deref(&self) -> &Tile {
        &self.tile
    }
}

impl Drop for PinnedTile<'_> {
    fn drop(&mut self) {
        self.slot.pins.fetch_sub(1, Ordering::AcqRel);
    }
}

impl Drop for StoredArray {
    fn drop(&mut self) {
        for slot in &self.slots {
            if slot.data.lock().unwrap_or_else(|p| p.into_inner()).take().is_some() {
                let _ = self.pool.remove(slot.id);
            }
        }
    }
}

impl StoredArray {
    /// An empty memory-backed array.
    pub fn create(meta: ArrayMeta, layout: Layout, pool: Arc<BufferPool>) -> Result<StoredArray> {
        if layout == Layout::Csr && meta.ndim() != 2 {
            return Err(Error::Spec(format!("CSR layout needs a 2-d array, got {} dims", meta.ndim())));
        }
        let n = meta.tile_count();
        Ok(StoredArray::with_blocks(meta, layout, None, pool, vec![None; n], None))
    }

    fn with_blocks(
        meta: ArrayMeta,
        layout: Layout,
        seed: Option<u64>,
        pool: Arc<BufferPool>,
        blocks: Vec<Option<Block>>,
        file: Option<File>,
    ) -> StoredArray {
        let slots = (0..blocks.len())
            .map(|_| {
                Arc::new(TileSlot {
                    id: pool.allocate_id(),
                    pins: AtomicU32::new(0),
                    pin_total: AtomicU64::new(0),
                    reads: AtomicU64::new(0),
                    load: Mutex::new(()),
                    data: Mutex::new(None),
                })
            })
            .collect();
        StoredArray { meta, layout, seed, pool, blocks: RwLock::new(blocks), file: file.map(Mutex::new), slots }
    }

    /// Builds an array from cells in any order, writing one tile at a time.
    pub fn build(
        meta: ArrayMeta,
        layout: Layout,
        pool: Arc<BufferPool>,
        cells: impl IntoIterator<Item = (Vec<u64>, Vec<Scalar>)>,
    ) -> Result<StoredArray> {
        let array = StoredArray::create(meta, layout, pool)?;
        let mut by_tile: BTreeMap<usize, Vec<LocalCell>> = BTreeMap::new();
        for (coord, values) in cells {
            if !array.meta.contains(&coord) {
                return Err(Error::Bounds(format!("cell {coord:?} outside array {:?}", array.meta.size())));
            }
            let (tc, cc) = array.meta.split(&coord);
            by_tile.entry(array.meta.tile_index(&tc)?).or_default().push((cc, values));
        }
        for (idx, cells) in by_tile {
            array.write_tile(&array.meta.tile_coord(idx), cells)?;
        }
        Ok(array)
    }

    pub fn meta(&self) -> &ArrayMeta {
        &self.meta
    }

    pub fn schema(&self) -> &CellSchema {
        &self.meta.schema
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn set_seed(&mut self, seed: Option<u64>) {
        self.seed = seed;
    }

    pub fn pool(&self) -> &Arc<BufferPool> {
        &self.pool
    }

    fn types(&self) -> Vec<AttrType> {
        self.meta.schema.attr_types()
    }

    /// Full (unclipped) tile extent; edge tiles keep the full allocation.
    fn extent(&self) -> Vec<u64> {
        self.meta.tile_size().to_vec()
    }

    /// Whether tile `tc` holds any cells.
    pub fn has_tile(&self, tc: &[u64]) -> Result<bool> {
        let idx = self.meta.tile_index(tc)?;
        Ok(self.read_blocks()[idx].is_some())
    }

    fn read_blocks(&self) -> std::sync::RwLockReadGuard<'_, Vec<Option<Block>>> {
        self.blocks.read().unwrap_or_else(|p| p.into_inner())
    }

    /// Pins tile `tc`, reading and caching it if it is not resident.
    /// A tile with no cells is returned as an empty tile without any read.
    pub fn pin(&self, tc: &[u64]) -> Result<PinnedTile<'_>> {
        let idx = self.meta.tile_index(tc)?;
        let slot = &self.slots[idx];
        slot.pin_total.fetch_add(1, Ordering::Relaxed);
        slot.pins.fetch_add(1, Ordering::AcqRel);
        // from here on an early return unpins through the guard's drop
        let mut pinned = PinnedTile { slot, tile: Arc::new(Tile::empty(Vec::new(), Vec::new(), self.layout, &[])) };

        let _load = slot.load.lock().unwrap_or_else(|p| p.into_inner());
        let cached = slot.data.lock().unwrap_or_else(|p| p.into_inner()).clone();
        if let Some(tile) = cached {
            match self.pool.touch(slot.id) {
                Ok(()) => {}
                // evicted between the cache check and the touch: re-register
                Err(Error::NotFound(_)) => self.register(slot, &tile)?,
                Err(e) => return Err(e),
            }
            pinned.tile = tile;
            return Ok(pinned);
        }

        let block = self.read_blocks()[idx].clone();
        let Some(block) = block else {
            pinned.tile = Arc::new(Tile::empty(tc.to_vec(), self.extent(), self.layout, &self.types()));
            return Ok(pinned);
        };
        let bytes = self.block_bytes(&block)?;
        let tile = Arc::new(Tile::decode(&bytes, tc.to_vec(), self.extent(), self.layout.for_ndim(self.meta.ndim()), &self.types())?);
        slot.reads.fetch_add(1, Ordering::Relaxed);
        self.register(slot, &tile)?;
        *slot.data.lock().unwrap_or_else(|p| p.into_inner()) = Some(tile.clone());
        pinned.tile = tile;
        Ok(pinned)
    }

    fn register(&self, slot: &Arc<TileSlot>, tile: &Tile) -> Result<()> {
        self.pool.add(BufferObject::new(slot.id, tile.byte_size(), EngineTag::Array, slot.clone()))
    }

    fn block_bytes(&self, block: &Block) -> Result<Arc<[u8]>> {
        match block {
            Block::Memory(b) => Ok(b.clone()),
            Block::File { offset, len } => {
                let file = self.file.as_ref().ok_or_else(|| Error::Internal("file block without a file".into()))?;
                let mut f = file.lock().unwrap_or_else(|p| p.into_inner());
                f.seek(SeekFrom::Start(*offset))?;
                let mut buf = vec![0u8; *len as usize];
                f.read_exact(&mut buf)?;
                Ok(buf.into())
            }
        }
    }

    /// Reads tile `tc` straight from its block, bypassing the cache and
    /// the counters.
    pub fn read_tile_uncached(&self, tc: &[u64]) -> Result<Option<Tile>> {
        let idx = self.meta.tile_index(tc)?;
        let block = self.read_blocks()[idx].clone();
        block
            .map(|b| {
                let bytes = self.block_bytes(&b)?;
                Tile::decode(&bytes, tc.to_vec(), self.extent(), self.layout.for_ndim(self.meta.ndim()), &self.types())
            })
            .transpose()
    }

    /// Replaces the contents of tile `tc` with `cells` (in-tile coordinates).
    pub fn write_tile(&self, tc: &[u64], cells: Vec<LocalCell>) -> Result<()> {
        let idx = self.meta.tile_index(tc)?;
        for (cc, _) in &cells {
            let global = self.meta.join(tc, cc);
            if cc.len() != self.meta.ndim() || !self.meta.contains(&global) {
                return Err(Error::Bounds(format!("cell {global:?} outside array {:?}", self.meta.size())));
            }
        }
        let tile = Tile::from_cells(tc.to_vec(), self.extent(), self.layout, &self.types(), cells)?;
        self.store_tile(idx, &tile)
    }

    /// Stores an already built tile whose coordinate is its position.
    pub fn put_tile(&self, tile: &Tile) -> Result<()> {
        let idx = self.meta.tile_index(tile.coord())?;
        if tile.extent() != self.meta.tile_size() || tile.layout() != self.layout.for_ndim(self.meta.ndim()) {
            return Err(Error::Shape("tile shape or layout does not match the array".into()));
        }
        self.store_tile(idx, tile)
    }

    fn store_tile(&self, idx: usize, tile: &Tile) -> Result<()> {
        let slot = &self.slots[idx];
        if slot.pins.load(Ordering::Acquire) > 0 {
            return Err(Error::Internal(format!("tile {:?} rewritten while pinned", tile.coord())));
        }
        let stale = slot.data.lock().unwrap_or_else(|p| p.into_inner()).take();
        if stale.is_some() {
            // may already have been evicted concurrently
            let _ = self.pool.remove(slot.id);
        }
        let block = (tile.cell_count() > 0).then(|| Block::Memory(tile.encode().into()));
        self.blocks.write().unwrap_or_else(|p| p.into_inner())[idx] = block;
        Ok(())
    }

    /// Visits every present cell in tile-major order (tiles in row-major grid
    /// order, cells in layout order). Each tile is pinned while visited.
    pub fn for_each_cell(&self, mut f: impl FnMut(&[u64], &Tile, usize) -> Result<()>) -> Result<()> {
        let present: Vec<usize> =
            self.read_blocks().iter().enumerate().filter(|(_, b)| b.is_some()).map(|(i, _)| i).collect();
        for idx in present {
            let tc = self.meta.tile_coord(idx);
            let tile = self.pin(&tc)?;
            for (cc, pos) in tile.cells() {
                let global = self.meta.join(&tc, &cc);
                f(&global, &tile, pos)?;
            }
        }
        Ok(())
    }

    /// All cells with global coordinates, in tile-major order.
    pub fn cells(&self) -> Result<Vec<(Vec<u64>, Vec<Scalar>)>> {
        let mut out = Vec::new();
        self.for_each_cell(|coord, tile, pos| {
            out.push((coord.to_vec(), tile.values(pos)));
            Ok(())
        })?;
        Ok(out)
    }

    pub fn cell_count(&self) -> Result<usize> {
        let mut n = 0;
        self.for_each_cell(|_, _, _| {
            n += 1;
            Ok(())
        })?;
        Ok(n)
    }

    /// Values of the cell at global coordinate `coord`.
    pub fn get(&self, coord: &[u64]) -> Result<Option<Vec<Scalar>>> {
        if !self.meta.contains(coord) {
            return Err(Error::Bounds(format!("cell {coord:?} outside array {:?}", self.meta.size())));
        }
        let (tc, cc) = self.meta.split(coord);
        self.pin(&tc)?.get_cell(&cc)
    }

    /// Total pin calls per tile (row-major tile index) since the last reset.
    pub fn pin_counts(&self) -> Vec<u64> {
        self.slots.iter().map(|s| s.pin_total.load(Ordering::Relaxed)).collect()
    }

    /// Block reads per tile since the last reset.
    pub fn read_counts(&self) -> Vec<u64> {
        self.slots.iter().map(|s| s.reads.load(Ordering::Relaxed)).collect()
    }

    pub fn total_pins(&self) -> u64 {
        self.pin_counts().iter().sum()
    }

    pub fn total_reads(&self) -> u64 {
        self.read_counts().iter().sum()
    }

    pub fn reset_counters(&self) {
        for s in &self.slots {
            s.pin_total.store(0, Ordering::Relaxed);
            s.reads.store(0, Ordering::Relaxed);
        }
    }

    /// Number of tiles currently pinned.
    pub fn pinned_tiles(&self) -> usize {
        self.slots.iter().filter(|s| s.pins.load(Ordering::Acquire) > 0).count()
    }

    /// Drops every unpinned cached tile from the pool.
    pub fn drop_cache(&self) {
        for slot in &self.slots {
            if slot.pins.load(Ordering::Acquire) > 0 {
                continue;
            }
            if slot.data.lock().unwrap_or_else(|p| p.into_inner()).take().is_some() {
                let _ = self.pool.remove(slot.id);
            }
        }
    }

    /// Writes the array file: header, tile directory, then tile blocks.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&self.encode_file()?)?;
        out.flush()?;
        Ok(())
    }

    /// The complete array file image.
    pub fn encode_file(&self) -> Result<Vec<u8>> {
        let meta = &self.meta;
        let mut h = Vec::new();
        h.extend_from_slice(MAGIC);
        h.extend_from_slice(&VERSION.to_le_bytes());
        h.extend_from_slice(&(meta.ndim() as u32).to_le_bytes());
        h.extend_from_slice(&(meta.schema.nattrs() as u32).to_le_bytes());
        h.push(self.layout.tag());
        h.push(self.seed.is_some() as u8);
        h.extend_from_slice(&self.seed.unwrap_or(0).to_le_bytes());
        for s in meta.size().iter().chain(meta.tile_size()) {
            h.extend_from_slice(&s.to_le_bytes());
        }
        for name in meta.schema.dims() {
            put_str(&mut h, name)?;
        }
        for (name, ty) in meta.schema.attrs() {
            put_str(&mut h, name)?;
            h.push(ty.tag());
        }
        let blocks: Vec<Option<Arc<[u8]>>> = self
            .read_blocks()
            .iter()
            .map(|b| b.as_ref().map(|b| self.block_bytes(b)).transpose())
            .collect::<Result<_>>()?;
        h.extend_from_slice(&(blocks.len() as u64).to_le_bytes());
        let tag = self.layout.for_ndim(meta.ndim()).tag();
        h.extend(blocks.iter().map(|b| if b.is_some() { tag } else { ABSENT_TAG }));

        let mut offset = (h.len() + blocks.len() * 16) as u64;
        for b in &blocks {
            let (off, len) = match b {
                Some(b) => (offset, b.len() as u64),
                None => (0, 0),
            };
            offset += len;
            h.extend_from_slice(&off.to_le_bytes());
            h.extend_from_slice(&len.to_le_bytes());
        }
        for b in blocks.iter().flatten() {
            h.extend_from_slice(b);
        }
        Ok(h)
    }

    /// Opens an array file. Tile blocks stay on disk and are read on pin.
    pub fn open(path: impl AsRef<Path>, pool: Arc<BufferPool>) -> Result<StoredArray> {
        let mut file = File::open(path)?;
        let (meta, layout, seed, blocks) = parse_header(&mut file)?;
        let file_len = file.metadata()?.len();
        if let Some(Block::File { offset, len }) =
            blocks.iter().flatten().find(|b| matches!(b, Block::File { offset, len } if offset + len > file_len))
        {
            return Err(Error::Format(format!("tile block at {offset}+{len} past end of file")));
        }
        Ok(StoredArray::with_blocks(meta, layout, seed, pool, blocks, Some(file)))
    }

    /// Decodes an in-memory array file image.
    pub fn from_file_bytes(bytes: &[u8], pool: Arc<BufferPool>) -> Result<StoredArray> {
        let mut cursor = std::io::Cursor::new(bytes);
        let (meta, layout, seed, blocks) = parse_header(&mut cursor)?;
        let blocks = blocks
            .into_iter()
            .map(|b| match b {
                Some(Block::File { offset, len }) => {
                    let range = offset as usize..(offset + len) as usize;
                    let body = bytes.get(range).ok_or_else(|| Error::Format("tile block past end".into()))?;
                    Ok(Some(Block::Memory(body.into())))
                }
                other => Ok(other),
            })
            .collect::<Result<_>>()?;
        Ok(StoredArray::with_blocks(meta, layout, seed, pool, blocks, None))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::Schema(format!("name too long: {s}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

type Header = (ArrayMeta, Layout, Option<u64>, Vec<Option<Block>>);

fn parse_header(r: &mut impl Read) -> Result<Header> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let ndim = read_u32(r)? as usize;
    let nattrs = read_u32(r)? as usize;
    let layout = Layout::from_tag(read_u8(r)?).ok_or_else(|| Error::Format("bad layout tag".into()))?;
    let has_seed = read_u8(r)? != 0;
    let seed = read_u64(r)?;
    let size = (0..ndim).map(|_| read_u64(r)).collect::<Result<Vec<_>>>()?;
    let tile = (0..ndim).map(|_| read_u64(r)).collect::<Result<Vec<_>>>()?;
    let dims = (0..ndim).map(|_| read_str(r)).collect::<Result<Vec<_>>>()?;
    let mut attrs = Vec::with_capacity(nattrs);
    for _ in 0..nattrs {
        let name = read_str(r)?;
        let ty = AttrType::from_tag(read_u8(r)?).ok_or_else(|| Error::Format("bad attribute type".into()))?;
        attrs.push((name, ty));
    }
    let meta = ArrayMeta::new(CellSchema::new(dims, attrs)?, size, tile)?;
    let count = read_u64(r)? as usize;
    if count != meta.tile_count() {
        return Err(Error::Format(format!("{count} tiles in directory, grid has {}", meta.tile_count())));
    }
    let mut tags = vec![0u8; count];
    r.read_exact(&mut tags)?;
    let mut blocks = Vec::with_capacity(count);
    for tag in tags {
        let offset = read_u64(r)?;
        let len = read_u64(r)?;
        blocks.push(match tag {
            ABSENT_TAG => None,
            t if t == layout.for_ndim(ndim).tag() => Some(Block::File { offset, len }),
            t => return Err(Error::Format(format!("tile layout tag {t} differs from array layout"))),
        });
    }
    Ok((meta, layout, has_seed.then_some(seed), blocks))
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let mut len = [0u8; 2];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("name is not UTF-8".into()))
}

/// Streams cells into an array, buffering exactly one tile and writing it
/// out whenever the incoming cell belongs to a different tile. A tile that
/// is revisited is merged with what was written before.
pub struct TileWriter<'a> {
    array: &'a StoredArray,
    current: Option<(Vec<u64>, Vec<LocalCell>)>,
    flushes: u64,
}

impl<'a> TileWriter<'a> {
    pub fn new(array: &'a StoredArray) -> Self {
        TileWriter { array, current: None, flushes: 0 }
    }

    pub fn write_cell(&mut self, coord: &[u64], values: Vec<Scalar>) -> Result<()> {
        let meta = self.array.meta();
        if !meta.contains(coord) {
            return Err(Error::Bounds(format!("cell {coord:?} outside array {:?}", meta.size())));
        }
        let (tc, cc) = meta.split(coord);
        if self.current.as_ref().is_some_and(|(cur, _)| *cur != tc) {
            self.flush()?;
        }
        self.current.get_or_insert_with(|| (tc, Vec::new())).1.push((cc, values));
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        let Some((tc, mut cells)) = self.current.take() else { return Ok(()) };
        if let Some(existing) = self.array.read_tile_uncached(&tc)? {
            cells.extend(existing.local_cells());
        }
        self.array.write_tile(&tc, cells)?;
        self.flushes += 1;
        Ok(())
    }

    /// Tile writes performed so far.
    pub fn flushes(&self) -> u64 {
        self.flushes
    }

    pub fn finish(mut self) -> Result<u64> {
        self.flush()?;
        Ok(self.flushes)
    }
}
