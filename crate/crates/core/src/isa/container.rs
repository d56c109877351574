//! `VTAP` program container: magic, version, instruction and micro-op counts,
//! then the packed instructions followed by the packed micro-ops. All
//! integers little-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{decode_instruction, decode_uop, encode_instruction, encode_uop, CodecError, Program};

pub const PROGRAM_MAGIC: &[u8; 4] = b"VTAP";
pub const PROGRAM_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported program container version {0}")]
    BadVersion(u32),
    #[error("instruction {index}: {source}")]
    Instruction { index: usize, source: CodecError },
    #[error("micro-op {index}: {source}")]
    MicroOp { index: usize, source: CodecError },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_program<W: Write>(mut w: W, prog: &Program) -> Result<(), ContainerError> {
    let mut buf = Vec::with_capacity(16 + prog.instrs.len() * 16 + prog.uops.len() * 4);
    buf.extend_from_slice(PROGRAM_MAGIC);
    buf.extend_from_slice(&PROGRAM_VERSION.to_le_bytes());
    buf.extend_from_slice(&(prog.instrs.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(prog.uops.len() as u32).to_le_bytes());
    for (index, i) in prog.instrs.iter().enumerate() {
        let b = encode_instruction(i).map_err(|source| ContainerError::Instruction { index, source })?;
        buf.extend_from_slice(&b);
    }
    for (index, u) in prog.uops.iter().enumerate() {
        let b = encode_uop(u).map_err(|source| ContainerError::MicroOp { index, source })?;
        buf.extend_from_slice(&b);
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_program<R: Read>(mut r: R) -> Result<Program, ContainerError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != PROGRAM_MAGIC {
        return Err(ContainerError::BadMagic(magic));
    }
    let version = read_u32(&mut r)?;
    if version != PROGRAM_VERSION {
        return Err(ContainerError::BadVersion(version));
    }
    let n_instr = read_u32(&mut r)? as usize;
    let n_uop = read_u32(&mut r)? as usize;
    let mut prog = Program::default();
    let mut b = [0u8; 16];
    for index in 0..n_instr {
        r.read_exact(&mut b)?;
        let i = decode_instruction(&b).map_err(|source| ContainerError::Instruction { index, source })?;
        prog.instrs.push(i);
    }
    let mut b = [0u8; 4];
    for _ in 0..n_uop {
        r.read_exact(&mut b)?;
        prog.uops.push(decode_uop(&b));
    }
    Ok(prog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{assemble, Instruction, MicroOp};

    #[test]
    fn roundtrip() {
        let p = assemble("LOAD scope=UOP y_size=1 x_size=2 x_stride=2\nFINISH\n@uops\nacc=1 inp=2 wgt=3\nacc=0 inp=0 wgt=0").unwrap();
        let mut buf = Vec::new();
        write_program(&mut buf, &p).unwrap();
        assert_eq!(&buf[..4], b"VTAP");
        assert_eq!(buf.len(), 16 + 2 * 16 + 2 * 4);
        assert_eq!(read_program(&buf[..]).unwrap(), p);
    }

    #[test]
    fn bad_magic() {
        let mut buf = Vec::new();
        write_program(&mut buf, &Program { instrs: vec![Instruction::finish()], uops: vec![MicroOp::default()] }).unwrap();
        buf[0] = b'X';
        let e = read_program(&buf[..]).unwrap_err();
        assert!(e.to_string().contains("bad magic"));
    }

    #[test]
    fn truncated() {
        let mut buf = Vec::new();
        write_program(&mut buf, &Program { instrs: vec![Instruction::finish()], uops: vec![] }).unwrap();
        buf.truncate(20);
        assert!(matches!(read_program(&buf[..]), Err(ContainerError::Io(_))));
    }
}
