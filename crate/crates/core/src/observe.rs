//! Agent-centered field-of-view observations and the imitation dataset format.
//!
//! `o1` stacks static obstacles, other agents, the absolute heuristic
//! `h(v)/(M_h+M_w)` and the relative heuristic `(h(v)-h(v_c))/(V_h+V_w)`.
//! `o2` stacks the same two obstacle planes and a one-hot goal indicator.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{Action, GridMap, Location};
use crate::heuristics::INF;
use crate::pibt::AgentState;

pub const O1_CHANNELS: usize = 4;
pub const O2_CHANNELS: usize = 3;

pub const DATASET_MAGIC: &[u8; 4] = b"SILD";
pub const DATASET_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum ObserveError {
    #[error("field of view must have odd positive dimensions, got {0}x{1}")]
    EvenFov(usize, usize),
    #[error("agent {0}: guidance field does not belong to its goal")]
    FieldMismatch(usize),
    #[error("agent index {0} out of range")]
    NoSuchAgent(usize),
    #[error("record observation shape does not match the dataset header")]
    Shape,
    #[error("not a dataset file (bad magic)")]
    Magic,
    #[error("unsupported dataset version {0}")]
    Version(u16),
    #[error("invalid action label {0}")]
    Label(u8),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservationConfig {
    pub fov_h: usize,
    pub fov_w: usize,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self { fov_h: 11, fov_w: 11 }
    }
}

impl ObservationConfig {
    pub fn new(fov_h: usize, fov_w: usize) -> Result<Self, ObserveError> {
        let cfg = Self { fov_h, fov_w };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ObserveError> {
        if self.fov_h % 2 == 0 || self.fov_w % 2 == 0 {
            return Err(ObserveError::EvenFov(self.fov_h, self.fov_w));
        }
        Ok(())
    }

    pub fn plane(&self) -> usize {
        self.fov_h * self.fov_w
    }

    pub fn half_h(&self) -> i32 {
        (self.fov_h / 2) as i32
    }

    pub fn half_w(&self) -> i32 {
        (self.fov_w / 2) as i32
    }

    /// Offset of `other` relative to `center` if it lies inside the window.
    pub fn offset_in_view(&self, center: Location, other: Location) -> Option<(i32, i32)> {
        let dr = other.row - center.row;
        let dc = other.col - center.col;
        (dr.abs() <= self.half_h() && dc.abs() <= self.half_w()).then_some((dr, dc))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborOffset {
    pub agent_id: usize,
    pub d_row: i32,
    pub d_col: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub config: ObservationConfig,
    /// `4 x V_h x V_w`, channel-major.
    pub o1: Vec<f32>,
    /// `3 x V_h x V_w`, channel-major.
    pub o2: Vec<f32>,
    pub neighbor_offsets: Vec<NeighborOffset>,
}

impl Observation {
    pub fn o1_channel(&self, c: usize) -> &[f32] {
        let p = self.config.plane();
        &self.o1[c * p..(c + 1) * p]
    }

    pub fn o2_channel(&self, c: usize) -> &[f32] {
        let p = self.config.plane();
        &self.o2[c * p..(c + 1) * p]
    }
}

/// Absolute heuristic channel value.
pub fn absolute_value(h: u32, map_h: usize, map_w: usize) -> f32 {
    if h == INF {
        return 1.0;
    }
    (h as f64 / (map_h + map_w) as f64) as f32
}

/// Relative heuristic channel value.
pub fn relative_value(h: u32, h_center: u32, cfg: &ObservationConfig) -> f32 {
    if h == INF || h_center == INF {
        return 0.0;
    }
    ((h as f64 - h_center as f64) / (cfg.fov_h + cfg.fov_w) as f64) as f32
}

/// Which agent (if any) stands on each cell.
#[derive(Debug, Clone)]
pub struct Occupancy {
    cells: Vec<u32>,
}

impl Occupancy {
    pub fn new(map: &GridMap, agents: &[AgentState]) -> Self {
        let mut cells = vec![u32::MAX; map.num_cells()];
        for (i, a) in agents.iter().enumerate() {
            if let Some(idx) = map.index(a.location) {
                cells[idx] = i as u32;
            }
        }
        Self { cells }
    }

    pub fn agent_at(&self, map: &GridMap, v: Location) -> Option<usize> {
        let idx = map.index(v)?;
        let a = self.cells[idx];
        (a != u32::MAX).then_some(a as usize)
    }
}

/// Observation of agent `i`.
pub fn encode(map: &GridMap, agents: &[AgentState], i: usize, cfg: &ObservationConfig) -> Result<Observation, ObserveError> {
    cfg.validate()?;
    let occ = Occupancy::new(map, agents);
    encode_with(map, agents, &occ, i, cfg)
}

pub fn encode_with(
    map: &GridMap,
    agents: &[AgentState],
    occ: &Occupancy,
    i: usize,
    cfg: &ObservationConfig,
) -> Result<Observation, ObserveError> {
    let agent = agents.get(i).ok_or(ObserveError::NoSuchAgent(i))?;
    if agent.field.goal != agent.goal {
        return Err(ObserveError::FieldMismatch(i));
    }
    let field = &agent.field;
    let plane = cfg.plane();
    let mut o1 = vec![0f32; O1_CHANNELS * plane];
    let mut o2 = vec![0f32; O2_CHANNELS * plane];
    let mut neighbor_offsets = Vec::new();
    let center = agent.location;
    let h_center = field.value(center);
    let (hh, hw) = (cfg.half_h(), cfg.half_w());
    for dr in -hh..=hh {
        for dc in -hw..=hw {
            let k = (dr + hh) as usize * cfg.fov_w + (dc + hw) as usize;
            let v = Location::new(center.row + dr, center.col + dc);
            let free = map.is_free(v);
            let h = if free { field.value(v) } else { INF };
            if !free {
                o1[k] = 1.0;
                o2[k] = 1.0;
            }
            if let Some(j) = occ.agent_at(map, v) {
                if j != i {
                    o1[plane + k] = 1.0;
                    o2[plane + k] = 1.0;
                    neighbor_offsets.push(NeighborOffset {
                        agent_id: j,
                        d_row: dr,
                        d_col: dc,
                    });
                }
            }
            o1[2 * plane + k] = absolute_value(h, map.height(), map.width());
            o1[3 * plane + k] = relative_value(h, h_center, cfg);
            if v == agent.goal {
                o2[2 * plane + k] = 1.0;
            }
        }
    }
    Ok(Observation {
        config: *cfg,
        o1,
        o2,
        neighbor_offsets,
    })
}

/// Observations for every agent, encoded in parallel.
pub fn encode_all(map: &GridMap, agents: &[AgentState], cfg: &ObservationConfig) -> Result<Vec<Observation>, ObserveError> {
    cfg.validate()?;
    let occ = Occupancy::new(map, agents);
    (0..agents.len())
        .into_par_iter()
        .map(|i| encode_with(map, agents, &occ, i, cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub step: u32,
    pub agent_id: u32,
    pub label: Action,
    pub observation: Observation,
}

/// Streams records into the binary dataset format.
pub struct DatasetWriter<W: Write> {
    inner: W,
    config: ObservationConfig,
    written: u64,
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(mut inner: W, config: ObservationConfig) -> Result<Self, ObserveError> {
        config.validate()?;
        inner.write_all(DATASET_MAGIC)?;
        inner.write_u16::<LittleEndian>(DATASET_VERSION)?;
        inner.write_u16::<LittleEndian>(config.fov_h as u16)?;
        inner.write_u16::<LittleEndian>(config.fov_w as u16)?;
        Ok(Self {
            inner,
            config,
            written: 0,
        })
    }

    pub fn record(&mut self, records: &[DatasetRecord]) -> Result<(), ObserveError> {
        for r in records {
            self.write_record(r)?;
        }
        Ok(())
    }

    pub fn write_record(&mut self, r: &DatasetRecord) -> Result<(), ObserveError> {
        let plane = self.config.plane();
        if r.observation.config != self.config
            || r.observation.o1.len() != O1_CHANNELS * plane
            || r.observation.o2.len() != O2_CHANNELS * plane
        {
            return Err(ObserveError::Shape);
        }
        let mut buf = Vec::with_capacity(record_size(&self.config));
        buf.write_u32::<LittleEndian>(r.step)?;
        buf.write_u32::<LittleEndian>(r.agent_id)?;
        buf.write_u8(r.label.index() as u8)?;
        for x in r.observation.o1.iter().chain(&r.observation.o2) {
            buf.write_f32::<LittleEndian>(*x)?;
        }
        self.inner.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn config(&self) -> ObservationConfig {
        self.config
    }

    pub fn records_written(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> Result<W, ObserveError> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Bytes per record for a configuration.
pub fn record_size(cfg: &ObservationConfig) -> usize {
    4 + 4 + 1 + 4 * (O1_CHANNELS + O2_CHANNELS) * cfg.plane()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: ObservationConfig,
    pub records: Vec<DatasetRecord>,
    /// Bytes of an incomplete trailing record that were skipped.
    pub truncated_tail: usize,
}

pub fn read_dataset<R: Read>(mut reader: R) -> Result<Dataset, ObserveError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(ObserveError::Magic);
    }
    let version = reader.read_u16::<LittleEndian>()?;
    if version != DATASET_VERSION {
        return Err(ObserveError::Version(version));
    }
    let fov_h = reader.read_u16::<LittleEndian>()? as usize;
    let fov_w = reader.read_u16::<LittleEndian>()? as usize;
    let config = ObservationConfig::new(fov_h, fov_w)?;
    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    let size = record_size(&config);
    let plane = config.plane();
    let mut records = Vec::with_capacity(body.len() / size);
    let mut chunks = body.chunks_exact(size);
    for chunk in &mut chunks {
        let mut c = chunk;
        let step = c.read_u32::<LittleEndian>()?;
        let agent_id = c.read_u32::<LittleEndian>()?;
        let raw = c.read_u8()?;
        let label = Action::from_index(raw as usize).ok_or(ObserveError::Label(raw))?;
        let mut o1 = vec![0f32; O1_CHANNELS * plane];
        let mut o2 = vec![0f32; O2_CHANNELS * plane];
        c.read_f32_into::<LittleEndian>(&mut o1)?;
        c.read_f32_into::<LittleEndian>(&mut o2)?;
        records.push(DatasetRecord {
            step,
            agent_id,
            label,
            observation: Observation {
                config,
                o1,
                o2,
                neighbor_offsets: Vec::new(),
            },
        });
    }
    Ok(Dataset {
        config,
        records,
        truncated_tail: chunks.remainder().len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heuristics::{backward_dijkstra, EdgeCostModel};
    use std::sync::Arc;

    fn agent(map: &GridMap, id: usize, n: usize, at: Location, goal: Location) -> AgentState {
        let f = Arc::new(backward_dijkstra(map, goal, &EdgeCostModel::uniform()).unwrap());
        AgentState::new(id, n, at, goal, f)
    }

    #[test]
    fn formula_examples() {
        assert_eq!(absolute_value(10, 64, 64), 0.078125);
        let cfg = ObservationConfig::default();
        assert_eq!(relative_value(14, 12, &cfg), (2.0f64 / 22.0) as f32);
        assert_eq!(relative_value(INF, 12, &cfg), 0.0);
        assert_eq!(absolute_value(INF, 4, 4), 1.0);
    }

    #[test]
    fn even_fov_rejected() {
        assert!(ObservationConfig::new(10, 11).is_err());
    }

    #[test]
    fn encode_small_world() {
        let m = GridMap::from_rows(&["...", ".@.", "..."]).unwrap();
        let a = vec![
            agent(&m, 0, 2, Location::new(0, 0), Location::new(0, 1)),
            agent(&m, 1, 2, Location::new(1, 0), Location::new(2, 2)),
        ];
        let cfg = ObservationConfig::new(3, 3).unwrap();
        let o = encode(&m, &a, 0, &cfg).unwrap();
        // row -1 and col -1 are outside the map
        assert_eq!(o.o1_channel(0), &[1., 1., 1., 1., 0., 0., 1., 0., 1.]);
        assert_eq!(o.o1_channel(0), o.o2_channel(0));
        assert_eq!(o.o1_channel(1), &[0., 0., 0., 0., 0., 0., 0., 1., 0.]);
        assert_eq!(o.o1_channel(1), o.o2_channel(1));
        assert_eq!(o.o2_channel(2), &[0., 0., 0., 0., 0., 1., 0., 0., 0.]);
        assert_eq!(o.o1_channel(3)[4], 0.0);
        assert_eq!(o.o1_channel(2)[5], 0.0);
        assert_eq!(o.o1_channel(2)[0], 1.0);
        assert_eq!(
            o.neighbor_offsets,
            vec![NeighborOffset {
                agent_id: 1,
                d_row: 1,
                d_col: 0
            }]
        );
    }

    #[test]
    fn dataset_roundtrip_and_truncation() {
        let m = GridMap::empty(5, 5);
        let a = vec![
            agent(&m, 0, 2, Location::new(2, 2), Location::new(0, 0)),
            agent(&m, 1, 2, Location::new(3, 2), Location::new(4, 4)),
        ];
        let cfg = ObservationConfig::new(3, 5).unwrap();
        let obs = encode_all(&m, &a, &cfg).unwrap();
        let mut recs: Vec<DatasetRecord> = obs
            .into_iter()
            .enumerate()
            .map(|(i, o)| DatasetRecord {
                step: 7,
                agent_id: i as u32,
                label: Action::ALL[i + 2],
                observation: o,
            })
            .collect();
        recs.push(DatasetRecord {
            step: 8,
            ..recs[0].clone()
        });
        let mut w = DatasetWriter::new(Vec::new(), cfg).unwrap();
        w.record(&recs).unwrap();
        assert_eq!(w.records_written(), 3);
        let bytes = w.finish().unwrap();
        assert_eq!(bytes.len(), 10 + 3 * record_size(&cfg));
        let back = read_dataset(&bytes[..]).unwrap();
        assert_eq!(back.truncated_tail, 0);
        for (x, y) in back.records.iter().zip(&recs) {
            assert_eq!((x.step, x.agent_id, x.label), (y.step, y.agent_id, y.label));
            let bits = |v: &[f32]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&x.observation.o1), bits(&y.observation.o1));
            assert_eq!(bits(&x.observation.o2), bits(&y.observation.o2));
        }

        let cut = &bytes[..bytes.len() - 17];
        let part = read_dataset(cut).unwrap();
        assert_eq!(part.records.len(), 2);
        assert_eq!(part.truncated_tail, record_size(&cfg) - 17);

        let empty = DatasetWriter::new(Vec::new(), cfg).unwrap().finish().unwrap();
        assert_eq!(empty.len(), 10);
        assert!(read_dataset(&empty[..]).unwrap().records.is_empty());
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(read_dataset(&b"NOPE\x01\x00\x03\x00\x03\x00"[..]), Err(ObserveError::Magic)));
    }
}
