//! A protocol-2 pickle reader covering what Planetoid files contain: numpy
//! arrays, scipy CSR matrices, `defaultdict(list)` adjacency lists.
//!
//! Objects are built in an arena so that memoized references observe later
//! mutations (`APPENDS` after `BINPUT`, `BUILD` on a memoized object).

use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    None,
    Bool(bool),
    Int(i64),
    Bytes(Vec<u8>),
    List(Vec<usize>),
    Tuple(Vec<usize>),
    Dict(Vec<(usize, usize)>),
    Global { module: String, name: String },
    /// Result of `REDUCE` or `NEWOBJ`; `state` is set by `BUILD`, `items` by `SETITEMS`.
    Object {
        callable: usize,
        args: usize,
        state: Option<usize>,
        items: Vec<(usize, usize)>,
    },
}

#[derive(Debug)]
pub struct Pickle {
    arena: Vec<Value>,
    root: usize,
}

const MARK: usize = usize::MAX;

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn line(&mut self) -> Result<&'a str, String> {
        let rest = &self.data[self.pos..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or("unterminated line")?;
        self.pos += nl + 1;
        std::str::from_utf8(&rest[..nl]).map_err(|e| e.to_string())
    }
}

impl Pickle {
    pub fn parse(data: &[u8]) -> Result<Pickle, String> {
        let mut r = Reader { data, pos: 0 };
        let mut arena: Vec<Value> = Vec::new();
        let mut stack: Vec<usize> = Vec::new();
        let mut memo: HashMap<u32, usize> = HashMap::new();
        let push = |arena: &mut Vec<Value>, stack: &mut Vec<usize>, v: Value| {
            arena.push(v);
            stack.push(arena.len() - 1);
        };
        fn pop(stack: &mut Vec<usize>) -> Result<usize, String> {
            match stack.pop() {
                Some(MARK) | None => Err("stack underflow".into()),
                Some(i) => Ok(i),
            }
        }
        fn pop_mark(stack: &mut Vec<usize>) -> Result<Vec<usize>, String> {
            let m = stack.iter().rposition(|&i| i == MARK).ok_or("missing mark")?;
            let items = stack.split_off(m + 1);
            stack.pop();
            Ok(items)
        }
        loop {
            let at = r.pos;
            let op = r.u8()?;
            match op {
                0x80 => {
                    let proto = r.u8()?;
                    if proto > 2 {
                        return Err(format!("unsupported pickle protocol {proto}"));
                    }
                }
                b'.' => break,
                b'(' => stack.push(MARK),
                b'N' => push(&mut arena, &mut stack, Value::None),
                0x88 => push(&mut arena, &mut stack, Value::Bool(true)),
                0x89 => push(&mut arena, &mut stack, Value::Bool(false)),
                b'K' => {
                    let v = r.u8()? as i64;
                    push(&mut arena, &mut stack, Value::Int(v))
                }
                b'M' => {
                    let v = r.u16()? as i64;
                    push(&mut arena, &mut stack, Value::Int(v))
                }
                b'J' => {
                    let v = r.u32()? as i32 as i64;
                    push(&mut arena, &mut stack, Value::Int(v))
                }
                b'U' => {
                    let k = r.u8()? as usize;
                    let b = r.take(k)?.to_vec();
                    push(&mut arena, &mut stack, Value::Bytes(b))
                }
                b'T' => {
                    let k = r.u32()? as usize;
                    let b = r.take(k)?.to_vec();
                    push(&mut arena, &mut stack, Value::Bytes(b))
                }
                b'c' => {
                    let module = r.line()?.to_string();
                    let name = r.line()?.to_string();
                    push(&mut arena, &mut stack, Value::Global { module, name })
                }
                b']' => push(&mut arena, &mut stack, Value::List(Vec::new())),
                b')' => push(&mut arena, &mut stack, Value::Tuple(Vec::new())),
                b'}' => push(&mut arena, &mut stack, Value::Dict(Vec::new())),
                0x85..=0x87 => {
                    let k = (op - 0x84) as usize;
                    let mut items = Vec::with_capacity(k);
                    for _ in 0..k {
                        items.push(pop(&mut stack)?);
                    }
                    items.reverse();
                    push(&mut arena, &mut stack, Value::Tuple(items))
                }
                b't' => {
                    let items = pop_mark(&mut stack)?;
                    push(&mut arena, &mut stack, Value::Tuple(items))
                }
                b'q' => {
                    let k = r.u8()? as u32;
                    memo.insert(k, *stack.last().ok_or("BINPUT on empty stack")?);
                }
                b'r' => {
                    let k = r.u32()?;
                    memo.insert(k, *stack.last().ok_or("LONG_BINPUT on empty stack")?);
                }
                b'h' => {
                    let k = r.u8()? as u32;
                    stack.push(*memo.get(&k).ok_or_else(|| format!("unknown memo key {k}"))?);
                }
                b'j' => {
                    let k = r.u32()?;
                    stack.push(*memo.get(&k).ok_or_else(|| format!("unknown memo key {k}"))?);
                }
                b'a' => {
                    let v = pop(&mut stack)?;
                    let l = *stack.last().ok_or("APPEND on empty stack")?;
                    match &mut arena[l] {
                        Value::List(items) => items.push(v),
                        _ => return Err(format!("APPEND to a non-list at byte {at}")),
                    }
                }
                b'e' => {
                    let vs = pop_mark(&mut stack)?;
                    let l = *stack.last().ok_or("APPENDS on empty stack")?;
                    match &mut arena[l] {
                        Value::List(items) => items.extend(vs),
                        _ => return Err(format!("APPENDS to a non-list at byte {at}")),
                    }
                }
                b'u' | b's' => {
                    let kv = if op == b'u' {
                        pop_mark(&mut stack)?
                    } else {
                        let v = pop(&mut stack)?;
                        let k = pop(&mut stack)?;
                        vec![k, v]
                    };
                    if kv.len() % 2 != 0 {
                        return Err("odd number of SETITEMS entries".into());
                    }
                    let pairs = kv.chunks(2).map(|c| (c[0], c[1]));
                    let d = *stack.last().ok_or("SETITEMS on empty stack")?;
                    match &mut arena[d] {
                        Value::Dict(items) | Value::Object { items, .. } => items.extend(pairs),
                        _ => return Err(format!("SETITEMS on a non-mapping at byte {at}")),
                    }
                }
                b'R' | 0x81 => {
                    let args = pop(&mut stack)?;
                    let callable = pop(&mut stack)?;
                    push(
                        &mut arena,
                        &mut stack,
                        Value::Object {
                            callable,
                            args,
                            state: None,
                            items: Vec::new(),
                        },
                    )
                }
                b'b' => {
                    let s = pop(&mut stack)?;
                    let o = *stack.last().ok_or("BUILD on empty stack")?;
                    match &mut arena[o] {
                        Value::Object { state, .. } => *state = Some(s),
                        _ => return Err(format!("BUILD on a non-object at byte {at}")),
                    }
                }
                _ => return Err(format!("unsupported opcode 0x{op:02x} at byte {at}")),
            }
        }
        let root = pop(&mut stack)?;
        Ok(Pickle { arena, root })
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn get(&self, id: usize) -> &Value {
        &self.arena[id]
    }

    pub fn int(&self, id: usize) -> Result<i64, String> {
        match self.get(id) {
            Value::Int(v) => Ok(*v),
            v => Err(format!("expected int, found {v:?}")),
        }
    }

    pub fn bytes(&self, id: usize) -> Result<&[u8], String> {
        match self.get(id) {
            Value::Bytes(b) => Ok(b),
            v => Err(format!("expected bytes, found {v:?}")),
        }
    }

    pub fn seq(&self, id: usize) -> Result<&[usize], String> {
        match self.get(id) {
            Value::List(v) | Value::Tuple(v) => Ok(v),
            v => Err(format!("expected a sequence, found {v:?}")),
        }
    }

    fn global_name(&self, id: usize) -> Option<(&str, &str)> {
        match self.get(id) {
            Value::Global { module, name } => Some((module, name)),
            _ => None,
        }
    }

    /// `(callable module, callable name, args, state, items)` of an object.
    fn object(&self, id: usize) -> Result<(&str, &str, usize, Option<usize>, &[(usize, usize)]), String> {
        match self.get(id) {
            Value::Object {
                callable,
                args,
                state,
                items,
            } => {
                let (m, n) = self
                    .global_name(*callable)
                    .ok_or("object callable is not a global")?;
                Ok((m, n, *args, *state, items))
            }
            v => Err(format!("expected an object, found {v:?}")),
        }
    }

    /// Decodes a numpy array into `(shape, values as f64)`.
    pub fn ndarray(&self, id: usize) -> Result<(Vec<usize>, Vec<f64>), String> {
        let (m, n, _, state, _) = self.object(id)?;
        if (m, n) != ("numpy.core.multiarray", "_reconstruct") {
            return Err(format!("expected a numpy array, found {m}.{n}"));
        }
        let state = self.seq(state.ok_or("numpy array without state")?)?;
        if state.len() != 5 {
            return Err("numpy array state is not a 5-tuple".into());
        }
        let shape = self
            .seq(state[1])?
            .iter()
            .map(|&i| self.int(i).map(|v| v as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if matches!(self.get(state[3]), Value::Bool(true)) {
            return Err("Fortran-ordered arrays are not supported".into());
        }
        let (kind, width, little) = self.dtype(state[2])?;
        let raw = self.bytes(state[4])?;
        let count: usize = shape.iter().product();
        if raw.len() != count * width {
            return Err(format!("array data has {} bytes, expected {}", raw.len(), count * width));
        }
        let decode = |c: &[u8]| -> f64 {
            let mut b = [0u8; 8];
            b[..width].copy_from_slice(c);
            if !little {
                b[..width].reverse();
            }
            match (kind, width) {
                ('f', 4) => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
                ('f', 8) => f64::from_le_bytes(b),
                ('i', 4) => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
                ('i', 8) => i64::from_le_bytes(b) as f64,
                ('u', 1) | ('b', 1) => b[0] as f64,
                _ => unreachable!(),
            }
        };
        Ok((shape, raw.chunks(width).map(decode).collect()))
    }

    fn dtype(&self, id: usize) -> Result<(char, usize, bool), String> {
        let (m, n, args, state, _) = self.object(id)?;
        if (m, n) != ("numpy", "dtype") {
            return Err(format!("expected numpy.dtype, found {m}.{n}"));
        }
        let code = self.bytes(self.seq(args)?.first().copied().ok_or("empty dtype args")?)?;
        let code = std::str::from_utf8(code).map_err(|e| e.to_string())?;
        let (kind, width) = match code {
            "f4" => ('f', 4),
            "f8" => ('f', 8),
            "i4" => ('i', 4),
            "i8" => ('i', 8),
            "u1" => ('u', 1),
            "b1" => ('b', 1),
            other => return Err(format!("unsupported dtype {other}")),
        };
        let little = match state {
            Some(s) => {
                let s = self.seq(s)?;
                let order = s.get(1).map(|&i| self.bytes(i)).transpose()?.unwrap_or(b"<");
                order != b">"
            }
            None => true,
        };
        Ok((kind, width, little))
    }

    /// Decodes a scipy CSR matrix to a dense row-major `(rows, cols, values)`.
    pub fn csr_dense(&self, id: usize) -> Result<(usize, usize, Vec<f64>), String> {
        let (m, n, _, state, _) = self.object(id)?;
        if n != "csr_matrix" || !m.starts_with("scipy.sparse") {
            return Err(format!("expected a scipy CSR matrix, found {m}.{n}"));
        }
        let fields = match self.get(state.ok_or("CSR matrix without state")?) {
            Value::Dict(items) => items,
            v => return Err(format!("CSR state is not a dict: {v:?}")),
        };
        let mut shape = None;
        let (mut indptr, mut indices, mut data) = (None, None, None);
        for &(k, v) in fields {
            match self.bytes(k)? {
                b"_shape" => {
                    let s = self.seq(v)?;
                    if s.len() != 2 {
                        return Err("CSR shape is not 2-D".into());
                    }
                    shape = Some((self.int(s[0])? as usize, self.int(s[1])? as usize));
                }
                b"indptr" => indptr = Some(self.ndarray(v)?.1),
                b"indices" => indices = Some(self.ndarray(v)?.1),
                b"data" => data = Some(self.ndarray(v)?.1),
                _ => {}
            }
        }
        let (rows, cols) = shape.ok_or("CSR matrix without shape")?;
        let indptr = indptr.ok_or("CSR matrix without indptr")?;
        let indices = indices.ok_or("CSR matrix without indices")?;
        let data = data.ok_or("CSR matrix without data")?;
        if indptr.len() != rows + 1 || indices.len() != data.len() {
            return Err("inconsistent CSR arrays".into());
        }
        let mut dense = vec![0.0; rows * cols];
        for r in 0..rows {
            let (a, b) = (indptr[r] as usize, indptr[r + 1] as usize);
            if a > b || b > data.len() {
                return Err("CSR indptr out of range".into());
            }
            for k in a..b {
                let c = indices[k] as usize;
                if c >= cols {
                    return Err(format!("CSR column {c} out of range"));
                }
                dense[r * cols + c] += data[k];
            }
        }
        Ok((rows, cols, dense))
    }

    /// Decodes a `dict` or `defaultdict` of int to list of ints.
    pub fn adjacency_lists(&self, id: usize) -> Result<Vec<(usize, Vec<usize>)>, String> {
        let items = match self.get(id) {
            Value::Dict(items) => items.as_slice(),
            Value::Object { .. } => self.object(id)?.4,
            v => return Err(format!("expected a mapping, found {v:?}")),
        };
        items
            .iter()
            .map(|&(k, v)| {
                let key = self.int(k)? as usize;
                let nbrs = self
                    .seq(v)?
                    .iter()
                    .map(|&i| self.int(i).map(|x| x as usize))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok((key, nbrs))
            })
            .collect()
    }
}
